//! Monte Carlo verification: wealth under candidate strategies, paired
//! perturbation tests, the pathwise value process J_t and the flatness of
//! the variance moments.
//!
//! Everything here runs block by block through [`VarianceEngine::map_blocks`]
//! so that large path counts never hold the full path set in memory. Block
//! statistics are merged in block order.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, SimGrid};
use crate::riccati::{RiccatiSolution, RiccatiSpec};
use crate::simulate::{PathBundle, VarianceEngine};
use crate::stats::Moments;
use crate::strategy::{optimal_rule, value_function, UtilityKind, UtilitySpec};

/// Per-step multipliers of √V: rule[k][i] applies on (t_k, t_{k+1}].
pub type RuleTable = Vec<Vec<f64>>;

/// Tabulates a rule on the grid times.
pub fn tabulate_rule<F: Fn(f64) -> Vec<f64>>(grid: &SimGrid, rule: F) -> RuleTable {
    grid.times().into_iter().map(rule).collect()
}

/// Optimal rule on the grid.
pub fn optimal_rule_table(
    util: &UtilitySpec,
    spec: &RiccatiSpec,
    sol: &RiccatiSolution,
    grid: &SimGrid,
) -> Result<RuleTable> {
    grid.times()
        .into_iter()
        .map(|t| optimal_rule(util, &spec.params, sol, &spec.stabilizers, t))
        .collect()
}

/// Summary of E[U(X_T)] for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthRun {
    pub util: UtilitySpec,
    pub tag: String,
    pub terminal: Vec<f64>,
    pub utilities: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    pub ci95: (f64, f64),
}

impl WealthRun {
    fn from_paths(util: UtilitySpec, tag: String, terminal: Vec<f64>) -> Self {
        let utilities: Vec<f64> = terminal.iter().map(|&x| util.utility(x)).collect();
        let mut m = Moments::default();
        for &u in &utilities {
            m.push(u);
        }
        let se = m.se_mean();
        Self {
            util,
            tag,
            terminal,
            utilities,
            mean: m.mean,
            se,
            ci95: (m.mean - 1.96 * se, m.mean + 1.96 * se),
        }
    }
}

struct StepData {
    dt: f64,
    /// ∫_{t_{k-1}}^{t_k} r for k = 1..n (index k-1).
    rate_step: Vec<f64>,
    /// e^{-∫_0^{t_k} r}.
    disc: Vec<f64>,
    theta: Vec<f64>,
}

impl StepData {
    fn new(params: &ModelParams, grid: &SimGrid) -> Self {
        let t = grid.times();
        Self {
            dt: grid.step(),
            rate_step: t.windows(2).map(|w| params.rate.integral(w[0], w[1])).collect(),
            disc: t.iter().map(|&s| (-params.rate.integral(0.0, s)).exp()).collect(),
            theta: params.assets.iter().map(|a| a.theta).collect(),
        }
    }
}

/// Wealth along every path of a block. Returns X_T per path and X at the
/// `record` steps (record[s][q]).
#[allow(clippy::too_many_arguments)]
fn block_wealth(
    kind: UtilityKind,
    steps: &StepData,
    rule: &RuleTable,
    v: &[DMatrix<f64>],
    db: &[DMatrix<f64>],
    x0: f64,
    record: &[usize],
    offset: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = v[0].ncols();
    let n = v[0].nrows() - 1;
    let d = v.len();
    let dt = steps.dt;
    let mut terminal = Vec::with_capacity(p);
    let mut rec = vec![vec![0.0; p]; record.len()];
    for q in 0..p {
        let mut state = match kind {
            UtilityKind::Power => x0.ln(),
            UtilityKind::Exponential => x0,
        };
        let mut rec_idx = 0;
        if record.first() == Some(&0) {
            rec[0][q] = x0;
            rec_idx = 1;
        }
        for k in 1..=n {
            let mut drift = 0.0;
            let mut quad = 0.0;
            let mut noise = 0.0;
            for i in 0..d {
                let sv = v[i][(k - 1, q)].sqrt();
                let a = rule[k - 1][i] * sv;
                drift += a * steps.theta[i] * sv;
                quad += a * a;
                noise += a * db[i][(k - 1, q)];
            }
            let x = match kind {
                UtilityKind::Power => {
                    state += steps.rate_step[k - 1] + (drift - 0.5 * quad) * dt + noise;
                    state.exp()
                }
                UtilityKind::Exponential => {
                    state += steps.disc[k - 1] * (drift * dt + noise);
                    state / steps.disc[k]
                }
            };
            if !x.is_finite() {
                return Err(Error::NonFinite { path: offset + q, step: k });
            }
            if rec_idx < record.len() && record[rec_idx] == k {
                rec[rec_idx][q] = x;
                rec_idx += 1;
            }
            if k == n {
                terminal.push(x);
            }
        }
    }
    Ok((terminal, rec))
}

/// Simulates terminal wealth for `rule` on an in-memory bundle.
pub fn simulate_wealth<F: Fn(f64) -> Vec<f64>>(
    bundle: &PathBundle,
    util: &UtilitySpec,
    rule: F,
    params: &ModelParams,
    tag: &str,
) -> Result<WealthRun> {
    let table = tabulate_rule(&bundle.grid, rule);
    simulate_wealth_table(bundle, util, &table, params, tag)
}

pub fn simulate_wealth_table(
    bundle: &PathBundle,
    util: &UtilitySpec,
    rule: &RuleTable,
    params: &ModelParams,
    tag: &str,
) -> Result<WealthRun> {
    check_rule(rule, &bundle.grid, params.dim())?;
    let steps = StepData::new(params, &bundle.grid);
    let (terminal, _) = block_wealth(util.kind, &steps, rule, &bundle.v, &bundle.db, params.x0, &[], 0)?;
    Ok(WealthRun::from_paths(*util, tag.to_string(), terminal))
}

fn check_rule(rule: &RuleTable, grid: &SimGrid, d: usize) -> Result<()> {
    if rule.len() != grid.n_steps + 1 || rule.iter().any(|r| r.len() != d) {
        return Err(invalid("rule", "needs one d-vector per grid time"));
    }
    if rule.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("rule", "must be finite"));
    }
    Ok(())
}

/// Deterministic perturbation direction h(t).
#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    Constant(Vec<f64>),
    /// Linear interpolation from `start` at t = 0 to `end` at t = T.
    Linear { start: Vec<f64>, end: Vec<f64> },
}

impl Direction {
    pub fn at(&self, t: f64, horizon: f64) -> Vec<f64> {
        match self {
            Direction::Constant(h) => h.clone(),
            Direction::Linear { start, end } => {
                let w = t / horizon;
                start.iter().zip(end).map(|(a, b)| (1.0 - w) * a + w * b).collect()
            }
        }
    }

    pub fn label(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        match self {
            Direction::Constant(h) => format!("({})", fmt(h)),
            Direction::Linear { start, end } => format!("linear({})->({})", fmt(start), fmt(end)),
        }
    }
}

/// Additive perturbation rule + ε h(t) of the multiplier of √V.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub direction: Direction,
}

impl PerturbationSpec {
    pub fn new(epsilon: f64, direction: Direction) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be >= 0"));
        }
        Ok(Self { epsilon, direction })
    }

    pub fn apply(&self, base: &RuleTable, grid: &SimGrid) -> RuleTable {
        let times = grid.times();
        base.iter()
            .zip(times)
            .map(|(r, t)| {
                let h = self.direction.at(t, grid.horizon);
                r.iter().zip(h).map(|(a, b)| a + self.epsilon * b).collect()
            })
            .collect()
    }

    /// Directions (1,...,1), (1,-1,1,...) and the linear (1-t, t)-type
    /// ramp, each at ε ∈ {0.1, 0.2, 0.4}.
    pub fn standard_set(d: usize) -> Vec<PerturbationSpec> {
        Self::standard_set_with(d, &[0.1, 0.2, 0.4])
    }

    /// The standard directions at the given ε values.
    pub fn standard_set_with(d: usize, epsilons: &[f64]) -> Vec<PerturbationSpec> {
        let ones = vec![1.0; d];
        let alt: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let start: Vec<f64> = (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let end: Vec<f64> = (0..d).map(|i| if i == 0 { 0.0 } else { 1.0 }).collect();
        let dirs = [
            Direction::Constant(ones),
            Direction::Constant(alt),
            Direction::Linear { start, end },
        ];
        dirs.iter()
            .flat_map(|dir| {
                epsilons.iter().map(move |&e| PerturbationSpec {
                    epsilon: e,
                    direction: dir.clone(),
                })
            })
            .collect()
    }
}

/// A utility with its optimal rule and a list of alternative rules evaluated
/// on common random numbers.
#[derive(Debug, Clone)]
pub struct StrategyCase {
    pub util: UtilitySpec,
    pub tag: String,
    /// rules[0] is the reference rule.
    pub rules: Vec<RuleTable>,
}

/// Per-case Monte Carlo results.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub util: UtilitySpec,
    pub tag: String,
    /// Moments of U(X_T) per rule.
    pub utility: Vec<Moments>,
    /// Moments of U(X_T^{rule 0}) - U(X_T^{rule j}), j ≥ 1.
    pub paired: Vec<Moments>,
}

/// Streams `n_paths` paths through every case and rule.
pub fn evaluate_strategies(
    engine: &VarianceEngine,
    n_paths: usize,
    seed: u64,
    cases: &[StrategyCase],
) -> Result<Vec<CaseResult>> {
    let params = engine.params();
    let grid = engine.grid();
    for c in cases {
        if c.rules.is_empty() {
            return Err(invalid("rules", "each case needs at least one rule"));
        }
        for r in &c.rules {
            check_rule(r, &grid, params.dim())?;
        }
    }
    let steps = StepData::new(params, &grid);
    let bs = engine.block_size();
    let per_block = engine.map_blocks(n_paths, seed, &[], |b, paths| -> Result<Vec<CaseResult>> {
        cases
            .iter()
            .map(|c| {
                let mut terminal_u = Vec::with_capacity(c.rules.len());
                for r in &c.rules {
                    let (x, _) = block_wealth(c.util.kind, &steps, r, &paths.v, &paths.db, params.x0, &[], b * bs)?;
                    terminal_u.push(x.into_iter().map(|x| c.util.utility(x)).collect::<Vec<_>>());
                }
                let utility = terminal_u
                    .iter()
                    .map(|u| {
                        let mut m = Moments::default();
                        u.iter().for_each(|&x| m.push(x));
                        m
                    })
                    .collect();
                let paired = terminal_u[1..]
                    .iter()
                    .map(|u| {
                        let mut m = Moments::default();
                        terminal_u[0].iter().zip(u).for_each(|(a, b)| m.push(a - b));
                        m
                    })
                    .collect();
                Ok(CaseResult {
                    util: c.util,
                    tag: c.tag.clone(),
                    utility,
                    paired,
                })
            })
            .collect()
    });
    let mut out: Option<Vec<CaseResult>> = None;
    for block in per_block {
        let block = block?;
        match out.as_mut() {
            None => out = Some(block),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&block) {
                    a.utility.iter_mut().zip(&b.utility).for_each(|(x, y)| x.merge(y));
                    a.paired.iter_mut().zip(&b.paired).for_each(|(x, y)| x.merge(y));
                }
            }
        }
    }
    out.ok_or_else(|| invalid("n_paths", "must be >= 1"))
}

/// E[U] under the optimal rule against the closed-form value.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCheck {
    pub util: UtilitySpec,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub allowance: f64,
    pub pass: bool,
}

impl ValueCheck {
    /// Passes when |mc - analytic| ≤ 2·SE + `rel_allowance`·|analytic|.
    pub fn new(util: UtilitySpec, analytic: f64, mc: &Moments, rel_allowance: f64) -> Self {
        let allowance = 2.0 * mc.se_mean() + rel_allowance * analytic.abs();
        Self {
            util,
            analytic,
            mc_mean: mc.mean,
            mc_se: mc.se_mean(),
            allowance,
            pass: (mc.mean - analytic).abs() <= allowance,
        }
    }
}

/// One row of the optimality test.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRow {
    pub label: String,
    pub epsilon: f64,
    /// E[U(X^{α*})] - E[U(X^{α*+εh})].
    pub delta: f64,
    pub se: f64,
    pub delta_over_eps2: f64,
}

impl PerturbationRow {
    /// Δ in paired standard errors (∞ when Δ > 0 with zero SE).
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            self.delta / self.se
        } else if self.delta > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub util: UtilitySpec,
    pub base_mean: f64,
    pub base_se: f64,
    pub rows: Vec<PerturbationRow>,
}

impl OptimalityReport {
    pub fn from_case(case: &CaseResult, perturbations: &[PerturbationSpec]) -> Self {
        let rows = perturbations
            .iter()
            .zip(&case.paired)
            .map(|(p, m)| PerturbationRow {
                label: p.direction.label(),
                epsilon: p.epsilon,
                delta: m.mean,
                se: m.se_mean(),
                delta_over_eps2: if p.epsilon > 0.0 { m.mean / (p.epsilon * p.epsilon) } else { 0.0 },
            })
            .collect();
        Self {
            util: case.util,
            base_mean: case.utility[0].mean,
            base_se: case.utility[0].se_mean(),
            rows,
        }
    }

    /// Every Δ ≥ z_min paired SEs.
    pub fn all_significant(&self, z_min: f64) -> bool {
        self.rows.iter().all(|r| r.z() >= z_min)
    }

    fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = Vec::new();
        for r in &self.rows {
            if !labels.contains(&r.label) {
                labels.push(r.label.clone());
            }
        }
        labels
    }

    /// max/min of Δ/ε² per direction label.
    pub fn curvature_spread(&self) -> Vec<(String, f64)> {
        self.curvature_band_spread(0.0)
    }

    /// Per direction, max_j(c_j - z s_j) / min_j(c_j + z s_j) with c = Δ/ε²
    /// and s its standard error. A value ≤ r means some common curvature lies
    /// within a factor r of every z-SE interval; z = 0 gives the point spread.
    pub fn curvature_band_spread(&self, z: f64) -> Vec<(String, f64)> {
        self.labels()
            .into_iter()
            .map(|l| {
                let rows = self.rows.iter().filter(|r| r.label == l && r.epsilon > 0.0);
                let (mut lo, mut hi) = (f64::MIN, f64::MAX);
                for r in rows {
                    let s = r.se / (r.epsilon * r.epsilon);
                    lo = lo.max(r.delta_over_eps2 - z * s);
                    hi = hi.min(r.delta_over_eps2 + z * s);
                }
                let ratio = if hi > 0.0 { (lo / hi).max(0.0) } else { f64::INFINITY };
                (l, ratio)
            })
            .collect()
    }
}

/// Paired comparison of the optimal rule with perturbed rules on a bundle.
pub fn optimality_test(
    bundle: &PathBundle,
    util: &UtilitySpec,
    spec: &RiccatiSpec,
    sol: &RiccatiSolution,
    perturbations: &[PerturbationSpec],
) -> Result<OptimalityReport> {
    let base = optimal_rule_table(util, spec, sol, &bundle.grid)?;
    let steps = StepData::new(&spec.params, &bundle.grid);
    let x0 = spec.params.x0;
    let run = |r: &RuleTable| -> Result<Vec<f64>> {
        let (x, _) = block_wealth(util.kind, &steps, r, &bundle.v, &bundle.db, x0, &[], 0)?;
        Ok(x.into_iter().map(|x| util.utility(x)).collect())
    };
    let u0 = run(&base)?;
    let mut utility = Moments::default();
    u0.iter().for_each(|&u| utility.push(u));
    let mut paired = Vec::with_capacity(perturbations.len());
    for p in perturbations {
        let u = run(&p.apply(&base, &bundle.grid))?;
        let mut m = Moments::default();
        u0.iter().zip(&u).for_each(|(a, b)| m.push(a - b));
        paired.push(m);
    }
    let case = CaseResult {
        util: *util,
        tag: String::new(),
        utility: vec![utility],
        paired,
    };
    Ok(OptimalityReport::from_case(&case, perturbations))
}

/// W_i(u) = a_i + F_i(u, ψ(T-u)) + λ_i ψ^i(T-u) in general-correlation form,
/// tabulated on the simulation grid.
fn profile_weights(spec: &RiccatiSpec, sol: &RiccatiSolution, grid: &SimGrid) -> Vec<Vec<f64>> {
    let t = spec.horizon();
    let delta = sol.delta;
    (0..spec.params.dim())
        .map(|i| {
            let lambda = spec.params.assets[i].lambda;
            grid.times()
                .into_iter()
                .map(|u| {
                    let psi = sol.psi_at(i, t - u);
                    delta * (spec.forcing(i) + spec.nonlinearity(i, u, psi) + lambda * psi)
                })
                .collect()
        })
        .collect()
}

/// Sample mean of J^{α*}_{t_k} on a set of profile steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub util: UtilitySpec,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Mean and SE of J_{t_k} - J_0 (paired).
    pub diff_mean: Vec<f64>,
    pub diff_se: Vec<f64>,
    /// max_k |mean(J_k - J_0)| / SE.
    pub flatness: f64,
    pub value: f64,
    /// Mean of U(X_T), identical to mean J_T.
    pub terminal_utility: f64,
}

/// Evenly spaced profile steps 0 = k_0 < ... < k_m = n.
pub fn profile_steps(n: usize, points: usize) -> Vec<usize> {
    let m = points.max(2) - 1;
    let mut s: Vec<usize> = (0..=m).map(|j| (j * n + m / 2) / m).collect();
    s.dedup();
    s
}

/// J_t = U-scaled Γ_t along simulated paths with
/// Γ_t = exp(γ∫_t^T r + Σ_i ∫_t^T W_i(u) E[V^i_u | F_t] du) (power) and
/// Γ_t = exp(Σ_i ∫_t^T W_i(u) E[V^i_u | F_t] du) (exponential). The forward
/// variance curve comes from the scheme's conditional expectation; the
/// u-integral is a trapezoid on the simulation grid.
pub fn martingale_profile(
    engine: &VarianceEngine,
    n_paths: usize,
    seed: u64,
    util: &UtilitySpec,
    spec: &RiccatiSpec,
    sol: &RiccatiSolution,
    steps: &[usize],
) -> Result<ProfileReport> {
    let grid = engine.grid();
    let params = engine.params();
    let n = grid.n_steps;
    if steps.is_empty() || steps[0] != 0 || steps.windows(2).any(|w| w[1] <= w[0]) || *steps.last().unwrap() > n {
        return Err(invalid("steps", "profile steps must start at 0 and increase within the grid"));
    }
    let rule = optimal_rule_table(util, spec, sol, &grid)?;
    let value = value_function(util, spec, sol, params.x0)?;
    let weights = profile_weights(spec, sol, &grid);
    let step_data = StepData::new(params, &grid);
    let dt = grid.step();
    let g = util.gamma;
    let times = grid.times();
    let rate_tail: Vec<f64> = times.iter().map(|&t| params.rate.integral(t, grid.horizon)).collect();
    let bs = engine.block_size();
    let d = params.dim();

    let blocks = engine.map_blocks(n_paths, seed, steps, |b, paths| -> Result<(Vec<Moments>, Vec<Moments>, Moments)> {
        let (terminal, wealth) =
            block_wealth(util.kind, &step_data, &rule, &paths.v, &paths.db, params.x0, steps, b * bs)?;
        let p = paths.n_paths;
        let mut j_mom = vec![Moments::default(); steps.len()];
        let mut diff = vec![Moments::default(); steps.len()];
        let mut term = Moments::default();
        for q in 0..p {
            term.push(util.utility(terminal[q]));
        }
        let mut j0 = vec![0.0; p];
        for (s, &k) in steps.iter().enumerate() {
            for q in 0..p {
                let mut expo = 0.0;
                for i in 0..d {
                    let fwd = &paths.forward[i][s];
                    let w = &weights[i];
                    let mut acc = 0.0;
                    for j in (k..=n).filter(|_| k < n) {
                        let c = if j == k || j == n { 0.5 } else { 1.0 };
                        acc += c * w[j] * fwd[(j, q)];
                    }
                    expo += acc * dt;
                }
                let x = wealth[s][q];
                let jv = match util.kind {
                    UtilityKind::Power => x.powf(g) / g * (g * rate_tail[k] + expo).exp(),
                    UtilityKind::Exponential => -(-g * rate_tail[k].exp() * x).exp() / g * expo.exp(),
                };
                if s == 0 {
                    j0[q] = jv;
                }
                j_mom[s].push(jv);
                diff[s].push(jv - j0[q]);
            }
        }
        Ok((j_mom, diff, term))
    });
    let mut j_all = vec![Moments::default(); steps.len()];
    let mut d_all = vec![Moments::default(); steps.len()];
    let mut term = Moments::default();
    for blk in blocks {
        let (j, df, t) = blk?;
        j_all.iter_mut().zip(&j).for_each(|(a, b)| a.merge(b));
        d_all.iter_mut().zip(&df).for_each(|(a, b)| a.merge(b));
        term.merge(&t);
    }
    let flatness = d_all
        .iter()
        .skip(1)
        .map(|m| crate::stats::z_score(m.mean, 0.0, m.se_mean()))
        .fold(0.0, f64::max);
    Ok(ProfileReport {
        util: *util,
        steps: steps.to_vec(),
        times: steps.iter().map(|&k| grid.time(k)).collect(),
        mean: j_all.iter().map(|m| m.mean).collect(),
        se: j_all.iter().map(|m| m.se_mean()).collect(),
        diff_mean: d_all.iter().map(|m| m.mean).collect(),
        diff_se: d_all.iter().map(|m| m.se_mean()).collect(),
        flatness,
        value,
        terminal_utility: term.mean,
    })
}

/// Per-asset flatness of the sample mean and variance of V over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityStats {
    pub asset: usize,
    pub target_mean: f64,
    pub target_var: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub se_var: Vec<f64>,
    /// max_k |mean_k - x∞| / SE.
    pub max_z_mean: f64,
    /// max_k |var_k - Var(V_0)| / SE(var).
    pub max_z_var: f64,
}

fn stationarity_from_moments(params: &ModelParams, moments: &[Vec<Moments>]) -> Vec<StationarityStats> {
    params
        .assets
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let m = &moments[i];
            let (tm, tv) = (a.x_inf(), a.v0_var());
            let mean: Vec<f64> = m.iter().map(|x| x.mean).collect();
            let var: Vec<f64> = m.iter().map(|x| x.variance()).collect();
            let se_mean: Vec<f64> = m.iter().map(|x| x.se_mean()).collect();
            let se_var: Vec<f64> = m.iter().map(|x| x.se_variance()).collect();
            let max_z_mean = m
                .iter()
                .map(|x| crate::stats::z_score(x.mean, tm, x.se_mean()))
                .fold(0.0, f64::max);
            let max_z_var = m
                .iter()
                .map(|x| crate::stats::z_score(x.variance(), tv, x.se_variance()))
                .fold(0.0, f64::max);
            StationarityStats {
                asset: i,
                target_mean: tm,
                target_var: tv,
                mean,
                var,
                se_mean,
                se_var,
                max_z_mean,
                max_z_var,
            }
        })
        .collect()
}

fn column_moments(v: &DMatrix<f64>) -> Vec<Moments> {
    (0..v.nrows())
        .map(|k| {
            let mut m = Moments::default();
            for q in 0..v.ncols() {
                m.push(v[(k, q)]);
            }
            m
        })
        .collect()
}

/// Stationarity statistics of an in-memory bundle.
pub fn stationarity_report(bundle: &PathBundle, params: &ModelParams) -> Vec<StationarityStats> {
    let moments: Vec<Vec<Moments>> = bundle.v.iter().map(column_moments).collect();
    stationarity_from_moments(params, &moments)
}

/// Stationarity statistics streamed through the engine.
pub fn stationarity_streaming(engine: &VarianceEngine, n_paths: usize, seed: u64) -> Vec<StationarityStats> {
    let blocks = engine.map_blocks(n_paths, seed, &[], |_, paths| {
        paths.v.iter().map(column_moments).collect::<Vec<_>>()
    });
    let mut acc = blocks[0].clone();
    for b in &blocks[1..] {
        for (a, x) in acc.iter_mut().zip(b) {
            a.iter_mut().zip(x).for_each(|(m, y)| m.merge(y));
        }
    }
    stationarity_from_moments(engine.params(), &acc)
}
