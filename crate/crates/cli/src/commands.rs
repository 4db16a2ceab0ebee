//! Subcommand implementations. Each writes its files through a [`Writer`] and
//! returns the named pass/fail checks it evaluated.

use anyhow::{Context, Result};
use serde_json::{json, Value};
use vm_core::riccati::{assumption_gate, psi_bound_check, solve_riccati, BoundStatus};
use vm_core::simulate::V0Mode;
use vm_core::stabilizer::Stabilizer;
use vm_core::verify::{
    evaluate_strategies, martingale_profile, optimal_rule_table, profile_steps, stationarity_streaming,
    OptimalityReport, PerturbationSpec, StationarityStats, StrategyCase, ValueCheck,
};
use vm_core::{
    ModelParams, RiccatiSolution, RiccatiSpec, SimGrid, StrategyValue, UtilityKind, UtilitySpec, VarianceEngine,
};

use crate::config::{KindConfig, RunConfig};
use crate::output::{jnum, num, Meta, Writer};

/// Gamma levels of the strategy figure.
pub const FIG4_GAMMAS: [f64; 3] = [0.2, 0.5, 0.8];
/// Sample paths in the first figure.
pub const FIG1_PATHS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Stabilizer,
    Riccati,
    Simulate,
    Strategy,
    Value,
    Verify,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Stabilizer => "stabilizer",
            Command::Riccati => "riccati",
            Command::Simulate => "simulate",
            Command::Strategy => "strategy",
            Command::Value => "value",
            Command::Verify => "verify",
            Command::All => "all",
        }
    }

    /// `--steps` sets the Riccati grid for these commands and the simulation grid otherwise.
    fn steps_target_riccati(self) -> bool {
        matches!(self, Command::Riccati | Command::Value)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<std::path::PathBuf>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub utility: Option<KindConfig>,
}

/// Applies command-line overrides and revalidates.
pub fn apply_overrides(mut cfg: RunConfig, cmd: Command, o: &Overrides) -> Result<RunConfig> {
    if let Some(d) = &o.out {
        cfg.outputs.dir = d.clone();
    }
    if let Some(s) = o.seed {
        cfg.mc.seed = s;
    }
    if let Some(g) = o.gamma {
        cfg.utility.gamma = vec![g];
    }
    if let Some(p) = o.paths {
        cfg.mc.paths = p;
    }
    if let Some(k) = o.utility {
        cfg.utility.kind = vec![k];
    }
    if let Some(n) = o.steps {
        if cmd.steps_target_riccati() {
            cfg.grids.n_riccati = n;
        } else {
            cfg.grids.n_sim = n;
        }
    }
    cfg.validate().context("after command-line overrides")?;
    Ok(cfg)
}

/// A named invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
}

fn check(name: impl Into<String>, pass: bool) -> Check {
    Check { name: name.into(), pass }
}

/// Shared state of one invocation.
pub struct Run {
    pub cfg: RunConfig,
    pub params: ModelParams,
    pub grid: SimGrid,
    pub stabs: Vec<Stabilizer>,
    pub utilities: Vec<UtilitySpec>,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let params = cfg.model_params()?;
        let grid = SimGrid::new(cfg.grids.n_sim, params.horizon)?;
        let stabs = params.stabilizers(&grid.times())?;
        let utilities = cfg.utilities()?;
        Ok(Self {
            cfg,
            params,
            grid,
            stabs,
            utilities,
        })
    }

    pub fn meta(&self, cmd: Command) -> Meta {
        Meta {
            command: cmd.name().into(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.mc.seed,
        }
    }

    fn engine(&self, mode: V0Mode) -> Result<VarianceEngine> {
        Ok(VarianceEngine::new(&self.params, &self.stabs, self.grid)?
            .with_block_size(self.cfg.mc.blocks)
            .with_v0_mode(mode))
    }

    fn solve(&self, util: &UtilitySpec) -> Result<(RiccatiSpec, RiccatiSolution)> {
        let spec = RiccatiSpec::new(
            util.variant(),
            self.params.clone(),
            self.stabs.clone(),
            util.gamma,
            self.cfg.grids.n_riccati,
        )?;
        let sol = solve_riccati(&spec).with_context(|| format!("{} utility, gamma {}", util.kind.name(), util.gamma))?;
        Ok((spec, sol))
    }

    fn d(&self) -> usize {
        self.params.dim()
    }
}

fn tag(util: &UtilitySpec) -> String {
    format!("{}_g{}", util.kind.name(), util.gamma)
}

fn indexed(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn dispatch(cmd: Command, run: &Run, w: &mut Writer) -> Result<Vec<Check>> {
    match cmd {
        Command::Stabilizer => stabilizer(run, w),
        Command::Riccati => riccati(run, w),
        Command::Simulate => simulate(run, w).map(|(c, _)| c),
        Command::Strategy => strategy(run, w),
        Command::Value => {
            let body = value(run, w)?;
            let doc = json!({ "meta": w.meta().json(), "report": body });
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(Vec::new())
        }
        Command::Verify => verify(run, w),
        Command::All => all(run, w),
    }
}

pub fn stabilizer(run: &Run, w: &mut Writer) -> Result<Vec<Check>> {
    let d = run.d();
    let mut cols = vec!["t".to_string()];
    cols.extend(indexed("sigma", d));
    let rows: Vec<Vec<String>> = run
        .grid
        .times()
        .into_iter()
        .map(|t| {
            let mut r = vec![num(t)];
            r.extend(run.stabs.iter().map(|s| num(s.value(t))));
            r
        })
        .collect();
    w.csv("stabilizer.csv", &cols, &rows)?;
    let assets: Vec<Value> = run
        .stabs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let trust = match s {
                Stabilizer::Series(t) => jnum(t.trust_time),
                Stabilizer::Constant(_) => Value::Null,
            };
            json!({
                "asset": i + 1,
                "limit": jnum(s.limit()),
                "sup": jnum(s.sup_norm(run.params.horizon)),
                "trust_time": trust,
            })
        })
        .collect();
    w.json("stabilizer.json", json!({ "assets": assets }))?;
    Ok(Vec::new())
}

pub fn riccati(run: &Run, w: &mut Writer) -> Result<Vec<Check>> {
    let d = run.d();
    let mut checks = Vec::new();
    for util in &run.utilities {
        let (_, sol) = run.solve(util)?;
        let mut cols = vec!["t".to_string()];
        cols.extend(indexed("psi", d));
        cols.push("variant".into());
        let rows: Vec<Vec<String>> = sol
            .times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let mut r = vec![num(t)];
                r.extend((0..d).map(|i| num(sol.psi[i][k])));
                r.push(sol.variant.name().into());
                r
            })
            .collect();
        w.csv(&format!("riccati_{}.csv", tag(util)), &cols, &rows)?;

        let gate = assumption_gate(&run.params, &sol, &run.stabs, 2.0, None)?;
        let mut report = json!({
            "utility": util.kind.name(),
            "gamma": util.gamma,
            "variant": sol.variant.name(),
            "n_steps": sol.n_steps(),
            "assumption_gate": {
                "p": gate.p,
                "sigma_norm": jnum(gate.sigma_norm),
                "a_p": jnum(gate.a_p),
                "lhs": jnum(gate.lhs),
                "a": jnum(gate.a),
                "a_defaulted": gate.a_defaulted,
                "pass": gate.pass,
            },
        });
        checks.push(check(format!("assumption gate {}", tag(util)), gate.pass));
        if util.kind == UtilityKind::Exponential {
            let bounds = psi_bound_check(&sol, &run.params, &run.stabs)?;
            let mut rows = Vec::new();
            for b in &bounds {
                let sign_ok = sol.psi[b.asset].iter().all(|&p| p <= 0.0);
                checks.push(check(format!("psi sign asset {} {}", b.asset + 1, tag(util)), sign_ok));
                checks.push(check(
                    format!("psi bound asset {} {}", b.asset + 1, tag(util)),
                    b.status != BoundStatus::Fail,
                ));
                rows.push(json!({
                    "asset": b.asset + 1,
                    "lambda_bar": jnum(b.lambda_bar),
                    "bound": b.bound.map(jnum),
                    "sup_abs": jnum(b.sup_abs),
                    "status": format!("{:?}", b.status).to_lowercase(),
                    "nonpositive": sign_ok,
                }));
            }
            report["psi_bound"] = json!(rows);
        }
        w.json(&format!("riccati_{}.json", tag(util)), report)?;
    }
    Ok(checks)
}

fn stationarity_json(stats: &[StationarityStats], z: f64) -> Value {
    json!(stats
        .iter()
        .map(|s| json!({
            "asset": s.asset + 1,
            "target_mean": jnum(s.target_mean),
            "target_var": jnum(s.target_var),
            "max_z_mean": jnum(s.max_z_mean),
            "max_z_var": jnum(s.max_z_var),
            "pass": s.max_z_mean <= z && s.max_z_var <= z,
        }))
        .collect::<Vec<_>>())
}

fn stationarity_rows(run: &Run, stats: &[StationarityStats]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut cols = vec!["t".to_string()];
    for i in 1..=stats.len() {
        for c in ["mean_V", "var_V", "se_mean_V", "se_var_V"] {
            cols.push(format!("{c}_{i}"));
        }
    }
    let rows = run
        .grid
        .times()
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let mut r = vec![num(t)];
            for s in stats {
                r.extend([s.mean[k], s.var[k], s.se_mean[k], s.se_var[k]].map(num));
            }
            r
        })
        .collect();
    (cols, rows)
}

fn stationarity_checks(stats: &[StationarityStats], z: f64) -> Vec<Check> {
    stats
        .iter()
        .map(|s| check(format!("stationarity asset {}", s.asset + 1), s.max_z_mean <= z && s.max_z_var <= z))
        .collect()
}

/// Gaussian-V_0 variance paths: moment profile and flatness statistics.
pub fn simulate(run: &Run, w: &mut Writer) -> Result<(Vec<Check>, Vec<StationarityStats>)> {
    let engine = run.engine(V0Mode::Gaussian)?;
    let stats = stationarity_streaming(&engine, run.cfg.mc.paths, run.cfg.mc.seed);
    let (cols, rows) = stationarity_rows(run, &stats);
    w.csv("simulate.csv", &cols, &rows)?;
    let z = run.cfg.tolerances.stationarity_z;
    w.json(
        "simulate.json",
        json!({ "paths": run.cfg.mc.paths, "n_steps": run.grid.n_steps, "threshold_z": z,
                "stationarity": stationarity_json(&stats, z) }),
    )?;
    Ok((stationarity_checks(&stats, z), stats))
}

pub fn strategy(run: &Run, w: &mut Writer) -> Result<Vec<Check>> {
    let d = run.d();
    for util in &run.utilities {
        let (spec, sol) = run.solve(util)?;
        let sv = StrategyValue::compute(util, &spec, &sol, &run.grid)?;
        let mut cols = vec!["t".to_string()];
        cols.extend(indexed("rule", d));
        let rows: Vec<Vec<String>> = sv
            .times
            .iter()
            .zip(&sv.pi_star)
            .map(|(&t, p)| std::iter::once(num(t)).chain(p.iter().map(|&x| num(x))).collect())
            .collect();
        w.csv(&format!("strategy_{}.csv", tag(util)), &cols, &rows)?;
    }
    Ok(Vec::new())
}

/// Analytic values at V_0 = E[V_0].
pub fn value(run: &Run, w: &mut Writer) -> Result<Value> {
    let mut values = Vec::new();
    for util in &run.utilities {
        let (spec, sol) = run.solve(util)?;
        let v = vm_core::strategy::value_function(util, &spec, &sol, run.params.x0)?;
        values.push(json!({
            "utility": util.kind.name(),
            "gamma": util.gamma,
            "value": jnum(v),
            "x0": run.params.x0,
            "n_riccati": run.cfg.grids.n_riccati,
            "v0": "mean",
        }));
    }
    let body = json!({ "values": values });
    w.json("value.json", body.clone())?;
    Ok(body)
}

pub fn verify(run: &Run, w: &mut Writer) -> Result<Vec<Check>> {
    let tol = &run.cfg.tolerances;
    let (paths, seed) = (run.cfg.mc.paths, run.cfg.mc.seed);
    let mut checks = Vec::new();

    let engine = run.engine(run.cfg.mc.v0.into())?;
    let perts = PerturbationSpec::standard_set_with(run.d(), &tol.epsilons);
    let mut solved = Vec::new();
    let mut cases = Vec::new();
    for util in &run.utilities {
        let (spec, sol) = run.solve(util)?;
        let base = optimal_rule_table(util, &spec, &sol, &run.grid)?;
        let mut rules = vec![base.clone()];
        rules.extend(perts.iter().map(|p| p.apply(&base, &run.grid)));
        cases.push(StrategyCase {
            util: *util,
            tag: tag(util),
            rules,
        });
        solved.push((spec, sol));
    }
    let results = evaluate_strategies(&engine, paths, seed, &cases)?;

    let mut value_json = Vec::new();
    let mut opt_json = Vec::new();
    for (res, (spec, sol)) in results.iter().zip(&solved) {
        let util = res.util;
        let analytic = vm_core::strategy::value_function(&util, spec, sol, run.params.x0)?;
        let vc = ValueCheck::new(util, analytic, &res.utility[0], tol.value_allowance);
        checks.push(check(format!("value {}", res.tag), vc.pass));
        value_json.push(json!({
            "utility": util.kind.name(), "gamma": util.gamma, "analytic": jnum(analytic),
            "mc_mean": jnum(vc.mc_mean), "mc_se": jnum(vc.mc_se), "allowance": jnum(vc.allowance), "pass": vc.pass,
        }));

        let rep = OptimalityReport::from_case(res, &perts);
        let nonneg = rep.rows.iter().all(|r| r.delta >= -tol.perturbation_z * r.se);
        let spread = rep.curvature_band_spread(tol.curvature_z);
        let stable = spread.iter().all(|(_, s)| *s <= tol.curvature_spread);
        checks.push(check(format!("suboptimality {}", res.tag), nonneg));
        checks.push(check(format!("curvature {}", res.tag), stable));
        opt_json.push(json!({
            "utility": util.kind.name(), "gamma": util.gamma,
            "rows": rep.rows.iter().map(|r| json!({
                "direction": r.label, "epsilon": r.epsilon, "delta": jnum(r.delta), "se": jnum(r.se),
                "z": jnum(r.z()), "delta_over_eps2": jnum(r.delta_over_eps2),
            })).collect::<Vec<_>>(),
            "curvature_spread": rep.curvature_spread().iter().zip(&spread).map(|((l, p), (_, b))| json!({
                "direction": l, "point": jnum(*p), "band": jnum(*b),
            })).collect::<Vec<_>>(),
            "nonnegative": nonneg, "stable": stable,
        }));
    }

    let steps = profile_steps(run.grid.n_steps, tol.profile_points);
    let mut profile_json = Vec::new();
    for (util, (spec, sol)) in run.utilities.iter().zip(&solved) {
        let pr = martingale_profile(&engine, paths, seed, util, spec, sol, &steps)?;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        let start_ok = rel(pr.mean[0], pr.value) <= tol.endpoint_rel;
        let end_ok = rel(*pr.mean.last().unwrap(), pr.terminal_utility) <= tol.endpoint_rel;
        let flat = pr.flatness <= tol.flatness_z;
        checks.push(check(format!("profile flatness {}", tag(util)), flat));
        checks.push(check(format!("profile endpoints {}", tag(util)), start_ok && end_ok));
        let cols: Vec<String> = ["t", "step", "mean_J", "se_J", "mean_J_minus_J0", "se_J_minus_J0"]
            .map(String::from)
            .to_vec();
        let rows: Vec<Vec<String>> = (0..pr.steps.len())
            .map(|j| {
                vec![
                    num(pr.times[j]),
                    pr.steps[j].to_string(),
                    num(pr.mean[j]),
                    num(pr.se[j]),
                    num(pr.diff_mean[j]),
                    num(pr.diff_se[j]),
                ]
            })
            .collect();
        w.csv(&format!("profile_{}.csv", tag(util)), &cols, &rows)?;
        profile_json.push(json!({
            "utility": util.kind.name(), "gamma": util.gamma, "flatness": jnum(pr.flatness),
            "j0": jnum(pr.mean[0]), "value": jnum(pr.value),
            "jt": jnum(*pr.mean.last().unwrap()), "terminal_utility": jnum(pr.terminal_utility),
            "flat": flat, "endpoints": start_ok && end_ok,
        }));
    }

    let g_engine = run.engine(V0Mode::Gaussian)?;
    let stats = stationarity_streaming(&g_engine, paths, seed);
    let (cols, rows) = stationarity_rows(run, &stats);
    w.csv("stationarity.csv", &cols, &rows)?;
    checks.extend(stationarity_checks(&stats, tol.stationarity_z));

    let all_pass = checks.iter().all(|c| c.pass);
    w.json(
        "verify.json",
        json!({
            "paths": paths,
            "n_sim": run.grid.n_steps,
            "n_riccati": run.cfg.grids.n_riccati,
            "value": value_json,
            "optimality": opt_json,
            "profile": profile_json,
            "stationarity": stationarity_json(&stats, tol.stationarity_z),
            "checks": checks.iter().map(|c| json!({"name": c.name, "pass": c.pass})).collect::<Vec<_>>(),
            "pass": all_pass,
        }),
    )?;
    Ok(checks)
}

/// Every per-module output plus the four figure datasets.
pub fn all(run: &Run, w: &mut Writer) -> Result<Vec<Check>> {
    let mut checks = stabilizer(run, w)?;
    checks.extend(riccati(run, w)?);
    let (sim_checks, stats) = simulate(run, w)?;
    checks.extend(sim_checks);
    checks.extend(strategy(run, w)?);
    value(run, w)?;
    fig1(run, w)?;
    fig2(run, w, &stats)?;
    fig3(run, w)?;
    fig4(run, w)?;
    Ok(checks)
}

/// Stabilizer of every asset and sample paths of V^1.
fn fig1(run: &Run, w: &mut Writer) -> Result<()> {
    let engine = run.engine(V0Mode::Gaussian)?;
    let bundle = engine.simulate(FIG1_PATHS, run.cfg.mc.seed);
    let v1 = &bundle.v[0];
    let mut cols = vec!["t".to_string()];
    cols.extend(indexed("sigma", run.d()));
    cols.extend((1..=FIG1_PATHS).map(|p| format!("V_1_path_{p:02}")));
    let rows = run
        .grid
        .times()
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let mut r = vec![num(t)];
            r.extend(run.stabs.iter().map(|s| num(s.value(t))));
            r.extend((0..FIG1_PATHS).map(|q| num(v1[(k, q)])));
            r
        })
        .collect::<Vec<_>>();
    w.csv("fig1.csv", &cols, &rows)
}

/// Sample mean and variance of V against their constant targets.
fn fig2(run: &Run, w: &mut Writer, stats: &[StationarityStats]) -> Result<()> {
    let mut cols = vec!["t".to_string()];
    for i in 1..=stats.len() {
        for c in ["mean_V", "target_mean_V", "var_V", "target_var_V"] {
            cols.push(format!("{c}_{i}"));
        }
    }
    let rows = run
        .grid
        .times()
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let mut r = vec![num(t)];
            for s in stats {
                r.extend([s.mean[k], s.target_mean, s.var[k], s.target_var].map(num));
            }
            r
        })
        .collect::<Vec<_>>();
    w.csv("fig2.csv", &cols, &rows)
}

/// ψ for both utilities at the first configured γ.
fn fig3(run: &Run, w: &mut Writer) -> Result<()> {
    let gamma = run.cfg.utility.gamma[0];
    let d = run.d();
    let sols = [UtilitySpec::power(gamma), UtilitySpec::exponential(gamma)]
        .into_iter()
        .map(|u| Ok(run.solve(&u?)?.1))
        .collect::<Result<Vec<_>>>()?;
    let mut cols = vec!["t".to_string()];
    cols.extend(indexed(&format!("psi_power_g{gamma}"), d));
    cols.extend(indexed(&format!("psi_exponential_g{gamma}"), d));
    let rows = sols[0]
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut r = vec![num(t)];
            for s in &sols {
                r.extend((0..d).map(|i| num(s.psi[i][k])));
            }
            r
        })
        .collect::<Vec<_>>();
    w.csv("fig3.csv", &cols, &rows)
}

/// Deterministic π*_t for the γ sweep, both utilities.
fn fig4(run: &Run, w: &mut Writer) -> Result<()> {
    let d = run.d();
    let mut cols = vec!["t".to_string()];
    let mut series = Vec::new();
    for g in FIG4_GAMMAS {
        for u in [UtilitySpec::power(g)?, UtilitySpec::exponential(g)?] {
            let (spec, sol) = run.solve(&u)?;
            series.push(StrategyValue::compute(&u, &spec, &sol, &run.grid)?.pi_star);
            cols.extend(indexed(&format!("pi_{}", tag(&u)), d));
        }
    }
    let rows = run
        .grid
        .times()
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let mut r = vec![num(t)];
            for s in &series {
                r.extend(s[k].iter().map(|&x| num(x)));
            }
            r
        })
        .collect::<Vec<_>>();
    w.csv("fig4.csv", &cols, &rows)
}
