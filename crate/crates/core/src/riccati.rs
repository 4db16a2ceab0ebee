//! Riccati–Volterra equations for ψ and their fractional Adams solver.
//!
//! Each component solves ψ^i(t) = ∫_0^t K_{α_i}(t-s) (a_i + F_i(T-s, ψ(s))) ds.
//! With a diagonal mean-reversion matrix the components decouple, so each
//! asset is integrated on its own with its own kernel exponent.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::model::ModelParams;
use crate::special::gamma;
use crate::stabilizer::Stabilizer;

/// |ψ| above this value is treated as a blow-up.
pub const PSI_CAP: f64 = 1e6;
/// Default number of Riccati steps.
pub const DEFAULT_STEPS: usize = 200;

/// Utility family and correlation structure of the Riccati system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    PowerGeneral,
    PowerDegenerate,
    ExponentialGeneral,
    ExponentialDegenerate,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::PowerGeneral,
        Variant::PowerDegenerate,
        Variant::ExponentialGeneral,
        Variant::ExponentialDegenerate,
    ];

    pub fn is_power(self) -> bool {
        matches!(self, Variant::PowerGeneral | Variant::PowerDegenerate)
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Variant::PowerDegenerate | Variant::ExponentialDegenerate)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::PowerGeneral => "power_general",
            Variant::PowerDegenerate => "power_degenerate",
            Variant::ExponentialGeneral => "exponential_general",
            Variant::ExponentialDegenerate => "exponential_degenerate",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid("variant", format!("unknown variant '{s}'")))
    }
}

/// Inputs of one Riccati solve.
#[derive(Debug, Clone)]
pub struct RiccatiSpec {
    pub variant: Variant,
    pub params: ModelParams,
    pub stabilizers: Vec<Stabilizer>,
    /// Risk aversion; ignored by the exponential variants, whose ψ does not depend on it.
    pub gamma: f64,
    pub n: usize,
}

impl RiccatiSpec {
    pub fn new(
        variant: Variant,
        params: ModelParams,
        stabilizers: Vec<Stabilizer>,
        gamma: f64,
        n: usize,
    ) -> Result<Self> {
        if stabilizers.len() != params.dim() {
            return Err(invalid("stabilizers", "need one stabilizer per asset"));
        }
        if n == 0 {
            return Err(invalid("n", "must be >= 1"));
        }
        if variant.is_power() && !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid("gamma", format!("power utility needs 0 < gamma < 1, got {gamma}")));
        }
        if !variant.is_power() && !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("exponential utility needs gamma > 0, got {gamma}")));
        }
        if variant.is_degenerate() {
            let rho0 = params.assets[0].rho;
            if params.assets.iter().any(|a| a.rho != rho0) {
                return Err(invalid("rho", "degenerate variants need equal correlations"));
            }
        }
        Ok(Self {
            variant,
            params,
            stabilizers,
            gamma,
            n,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    /// Distortion δ = (1-γ)/(1-γ+γρ²) for power_degenerate, 1 otherwise.
    pub fn delta(&self) -> f64 {
        match self.variant {
            Variant::PowerDegenerate => {
                let g = self.gamma;
                let rho = self.params.assets[0].rho;
                (1.0 - g) / (1.0 - g + g * rho * rho)
            }
            _ => 1.0,
        }
    }

    /// Constant forcing a_i.
    pub fn forcing(&self, i: usize) -> f64 {
        let th = self.params.assets[i].theta;
        let g = self.gamma;
        match self.variant {
            Variant::PowerGeneral => g * th * th / (2.0 * (1.0 - g)),
            Variant::PowerDegenerate => g * th * th / (2.0 * self.delta() * (1.0 - g)),
            Variant::ExponentialGeneral | Variant::ExponentialDegenerate => -th * th / 2.0,
        }
    }

    /// F_i(u, ψ) with the stabilizer evaluated at u.
    pub fn nonlinearity(&self, i: usize, u: f64, psi: f64) -> f64 {
        let a = &self.params.assets[i];
        let sp = self.stabilizers[i].value(u) * psi;
        let g = self.gamma;
        match self.variant {
            Variant::PowerGeneral => {
                let k = g / (1.0 - g);
                k * a.theta * a.rho * a.nu * sp - a.lambda * psi
                    + 0.5 * a.nu * a.nu * sp * sp * (1.0 + k * a.rho * a.rho)
            }
            Variant::PowerDegenerate => {
                g / (1.0 - g) * a.rho * a.theta * a.nu * sp - a.lambda * psi + 0.5 * a.nu * a.nu * sp * sp
            }
            Variant::ExponentialGeneral | Variant::ExponentialDegenerate => {
                -a.theta * a.rho * a.nu * sp - a.lambda * psi + 0.5 * a.nu * a.nu * (1.0 - a.rho * a.rho) * sp * sp
            }
        }
    }

    /// a_i + F_i(T - s, ψ).
    pub fn rhs(&self, i: usize, s: f64, psi: f64) -> f64 {
        self.forcing(i) + self.nonlinearity(i, self.horizon() - s, psi)
    }
}

/// a_i + F_i(T - s, ψ^i) for asset `i` of the d-vector `psi`.
pub fn riccati_rhs(spec: &RiccatiSpec, i: usize, s: f64, psi: &[f64]) -> Result<f64> {
    if i >= spec.params.dim() || psi.len() != spec.params.dim() {
        return Err(Error::Domain(format!(
            "asset index {i} and psi length {} must match dimension {}",
            psi.len(),
            spec.params.dim()
        )));
    }
    Ok(spec.rhs(i, s, psi[i]))
}

/// ψ on the uniform grid s_k = kT/n.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub variant: Variant,
    pub horizon: f64,
    /// Grid times; shorter than n+1 when the solution blew up.
    pub times: Vec<f64>,
    /// psi[i][k] = ψ^i(times[k]).
    pub psi: Vec<Vec<f64>>,
    /// a_i per asset.
    pub forcing: Vec<f64>,
    /// Distortion δ (1 unless power_degenerate).
    pub delta: f64,
    pub blowup_flag: bool,
    /// Estimated explosion time when `blowup_flag` is set.
    pub t_max: Option<f64>,
}

impl RiccatiSolution {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    /// Piecewise-linear interpolation of ψ^i, clamped to the grid.
    pub fn psi_at(&self, i: usize, t: f64) -> f64 {
        interpolate(&self.times, &self.psi[i], t)
    }

    /// ψ of the general-correlation system: δψ for power_degenerate.
    pub fn general_psi_at(&self, i: usize, t: f64) -> f64 {
        self.delta * self.psi_at(i, t)
    }

    pub fn sup_abs(&self, i: usize) -> f64 {
        self.psi[i].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn ensure_complete(&self) -> Result<()> {
        if self.blowup_flag {
            let last = *self.times.last().unwrap_or(&0.0);
            return Err(Error::Blowup {
                t_max: self.t_max.unwrap_or(last),
                last_valid: last,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    pub(crate) fn require_complete(&self) -> Result<()> {
        self.ensure_complete()
    }
}

pub(crate) fn interpolate(xs: &[f64], ys: &[f64], t: f64) -> f64 {
    let n = xs.len();
    if n == 1 || t <= xs[0] {
        return ys[0];
    }
    if t >= xs[n - 1] {
        return ys[n - 1];
    }
    let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let k = (((t - xs[0]) / h).floor() as usize).min(n - 2);
    let w = (t - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + w * (ys[k + 1] - ys[k])
}

/// Fractional Adams predictor–corrector for y(t) = ∫_0^t K_α(t-s) f(s_j, y) ds
/// on t_k = kΔ. Returns the values up to and including the last step with
/// |y| ≤ cap, and whether the cap was hit.
pub fn fractional_adams<F: Fn(usize, f64) -> f64>(alpha: f64, dt: f64, n: usize, cap: f64, f: F) -> (Vec<f64>, bool) {
    let cb = dt.powf(alpha) / gamma(alpha + 1.0);
    let ca = dt.powf(alpha) / gamma(alpha + 2.0);
    let ap1 = alpha + 1.0;
    // b by lag m = k - j; middle a by lag m = k - j
    let b: Vec<f64> = (0..=n).map(|m| cb * ((m as f64 + 1.0).powf(alpha) - (m as f64).powf(alpha))).collect();
    let pw: Vec<f64> = (0..=n + 2).map(|m| (m as f64).powf(ap1)).collect();
    let a_mid: Vec<f64> = (0..=n).map(|m| ca * (pw[m + 2] + pw[m] - 2.0 * pw[m + 1])).collect();

    let mut y = Vec::with_capacity(n + 1);
    let mut fv = Vec::with_capacity(n + 1);
    y.push(0.0);
    fv.push(f(0, 0.0));
    for k in 0..n {
        let kf = k as f64;
        let mut pred = 0.0;
        for j in 0..=k {
            pred += b[k - j] * fv[j];
        }
        let mut corr = ca * (pw[k] - (kf - alpha) * (kf + 1.0).powf(alpha)) * fv[0];
        for j in 1..=k {
            corr += a_mid[k - j] * fv[j];
        }
        let next = corr + ca * f(k + 1, pred);
        if !next.is_finite() || next.abs() > cap {
            return (y, true);
        }
        y.push(next);
        fv.push(f(k + 1, next));
    }
    (y, false)
}

fn solve_component(spec: &RiccatiSpec, i: usize, n: usize) -> (Vec<f64>, bool) {
    let alpha = spec.params.assets[i].alpha;
    let t = spec.horizon();
    let dt = t / n as f64;
    fractional_adams(alpha, dt, n, PSI_CAP, |j, y| spec.rhs(i, j as f64 * dt, y))
}

/// Solves on the grid of `spec`; on blow-up the solution is truncated at the last
/// valid step and `t_max` is refined on grids down to step 1e-3·T.
pub fn solve_riccati_partial(spec: &RiccatiSpec) -> RiccatiSolution {
    let n = spec.n;
    let t = spec.horizon();
    let d = spec.params.dim();
    let mut psi = Vec::with_capacity(d);
    let mut valid = n;
    let mut blown = false;
    for i in 0..d {
        let (y, hit) = solve_component(spec, i, n);
        if hit {
            blown = true;
            valid = valid.min(y.len() - 1);
        }
        psi.push(y);
    }
    for y in psi.iter_mut() {
        y.truncate(valid + 1);
    }
    let t_max = blown.then(|| {
        let mut nn = n;
        let mut est = (valid + 1) as f64 * t / n as f64;
        while t / (nn as f64) > 1e-3 * t {
            nn *= 2;
            let first = (0..d)
                .filter_map(|i| {
                    let (y, hit) = solve_component(spec, i, nn);
                    hit.then_some(y.len())
                })
                .min();
            if let Some(k) = first {
                est = k as f64 * t / nn as f64;
            }
        }
        est
    });
    RiccatiSolution {
        variant: spec.variant,
        horizon: t,
        times: (0..=valid).map(|k| if k == n { t } else { k as f64 * t / n as f64 }).collect(),
        psi,
        forcing: (0..d).map(|i| spec.forcing(i)).collect(),
        delta: spec.delta(),
        blowup_flag: blown,
        t_max,
    }
}

/// Solves on [0, T]; blow-up before T is an error carrying the last valid time.
pub fn solve_riccati(spec: &RiccatiSpec) -> Result<RiccatiSolution> {
    let sol = solve_riccati_partial(spec);
    sol.ensure_complete()?;
    Ok(sol)
}

/// Outcome of a bound check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    Pass,
    Fail,
    Skipped,
}

/// sup|ψ^i| against (θ²/(2λ̄))(1 - R_{λ̄}(T)).
#[derive(Debug, Clone, PartialEq)]
pub struct PsiBound {
    pub asset: usize,
    pub lambda_bar: f64,
    pub bound: Option<f64>,
    pub sup_abs: f64,
    pub status: BoundStatus,
}

/// Checks sup_t |ψ^i(t)| ≤ (θ_i²/(2λ̄_i))(1 - R_{α_i,λ̄_i}(T)) with
/// λ̄_i = λ_i + ν_i ρ_i θ_i ‖ς^i‖_∞ 1_{ρ_i ≤ 0}. Exponential variants only.
pub fn psi_bound_check(sol: &RiccatiSolution, params: &ModelParams, stabilizers: &[Stabilizer]) -> Result<Vec<PsiBound>> {
    if sol.variant.is_power() {
        return Err(Error::Domain("the psi bound applies to exponential variants only".into()));
    }
    let t = params.horizon;
    Ok(params
        .assets
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let sup_sigma = stabilizers[i].sup_norm(t);
            let lambda_bar = a.lambda + if a.rho <= 0.0 { a.nu * a.rho * a.theta * sup_sigma } else { 0.0 };
            let sup_abs = sol.sup_abs(i);
            match KernelSpec::new(a.alpha, lambda_bar) {
                Ok(k) => {
                    let bound = a.theta * a.theta / (2.0 * lambda_bar) * (1.0 - k.resolvent(t));
                    let ok = sup_abs <= bound * (1.0 + 1e-12);
                    PsiBound {
                        asset: i,
                        lambda_bar,
                        bound: Some(bound),
                        sup_abs,
                        status: if ok { BoundStatus::Pass } else { BoundStatus::Fail },
                    }
                }
                Err(_) => PsiBound {
                    asset: i,
                    lambda_bar,
                    bound: None,
                    sup_abs,
                    status: BoundStatus::Skipped,
                },
            }
        })
        .collect())
}

/// a(p) = max[p(2+|Σ|), 2(8p²-2p)(1+|Σ|²), p(1+|Σ|²)] with |Σ| = Σ ρ_i².
pub fn moment_constant(p: f64, sigma_norm: f64) -> f64 {
    let s2 = 1.0 + sigma_norm * sigma_norm;
    (p * (2.0 + sigma_norm))
        .max(2.0 * (8.0 * p * p - 2.0 * p) * s2)
        .max(p * s2)
}

/// Feasibility report for the boundedness condition
/// max_i sup_t (θ_i² + ν_i² ς^i(t)² ψ^i(T-t)²) ≤ a / a(p).
#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub p: f64,
    pub sigma_norm: f64,
    pub a_p: f64,
    pub lhs: f64,
    pub a: f64,
    pub a_defaulted: bool,
    pub pass: bool,
}

/// Evaluates the boundedness condition. Without `a`, the moment level defaults
/// to 2·a(p)·lhs, which makes the check a self-consistency report.
pub fn assumption_gate(
    params: &ModelParams,
    sol: &RiccatiSolution,
    stabilizers: &[Stabilizer],
    p: f64,
    a: Option<f64>,
) -> Result<GateReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid("p", format!("must be > 1, got {p}")));
    }
    if let Some(a) = a {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid("a", format!("must be > 0, got {a}")));
        }
    }
    let t = params.horizon;
    let sigma_norm: f64 = params.assets.iter().map(|x| x.rho * x.rho).sum();
    let a_p = moment_constant(p, sigma_norm);
    let lhs = params
        .assets
        .iter()
        .enumerate()
        .map(|(i, x)| {
            sol.times
                .iter()
                .map(|&s| {
                    let sp = stabilizers[i].value(t - s) * sol.general_psi_at(i, s);
                    x.theta * x.theta + x.nu * x.nu * sp * sp
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let (a_val, defaulted) = match a {
        Some(v) => (v, false),
        None => (2.0 * a_p * lhs, true),
    };
    Ok(GateReport {
        p,
        sigma_norm,
        a_p,
        lhs,
        a: a_val,
        a_defaulted: defaulted,
        pass: lhs <= a_val / a_p,
    })
}

/// Adaptive classical RK4 with step doubling for a scalar ODE y' = f(t, y),
/// y(0) = 0. Returns y at each of the increasing `times`.
pub fn rk4_reference<F: Fn(f64, f64) -> f64>(f: F, times: &[f64], tol: f64) -> Vec<f64> {
    let step = |t: f64, y: f64, h: f64| {
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
        let k4 = f(t + h, y + h * k3);
        y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let mut out = Vec::with_capacity(times.len());
    let (mut t, mut y) = (0.0, 0.0);
    let mut h: f64 = 1e-3;
    for &target in times {
        while t < target {
            let hh = h.min(target - t);
            let full = step(t, y, hh);
            let half = step(t + hh / 2.0, step(t, y, hh / 2.0), hh / 2.0);
            let err = (half - full).abs() / 15.0;
            if err <= tol * (1.0 + half.abs()) || hh < 1e-12 {
                t += hh;
                y = half + (half - full) / 15.0;
                if err < tol * 1e-2 {
                    h = hh * 2.0;
                }
            } else {
                h = hh / 2.0;
            }
        }
        out.push(y);
    }
    out
}

/// Sup errors of the Adams solution for each n against a Richardson
/// reference built from `ref_n` and `2·ref_n`. The extrapolation order is
/// estimated from `ref_n/2`, `ref_n`, `2·ref_n` and falls back to 1 + α_i
/// when the estimate is not in (0, 3).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub ns: Vec<usize>,
    /// errors[i][j]: asset i at ns[j].
    pub errors: Vec<Vec<f64>>,
    /// Extrapolation order used per asset.
    pub reference_order: Vec<f64>,
}

impl ConvergenceReport {
    /// errors[i][j] / errors[i][j+1].
    pub fn ratios(&self, i: usize) -> Vec<f64> {
        self.errors[i].windows(2).map(|w| w[0] / w[1]).collect()
    }
}

pub fn convergence_study(spec: &RiccatiSpec, ns: &[usize], ref_n: usize) -> Result<ConvergenceReport> {
    if ref_n % 2 != 0 || ns.iter().any(|&n| n == 0 || ref_n % n != 0) {
        return Err(invalid("ns", "every n must divide the (even) reference size"));
    }
    let d = spec.params.dim();
    let mut errors = vec![Vec::with_capacity(ns.len()); d];
    let mut orders = Vec::with_capacity(d);
    for i in 0..d {
        let (half, h0) = solve_component(spec, i, ref_n / 2);
        let (coarse, h1) = solve_component(spec, i, ref_n);
        let (fine, h2) = solve_component(spec, i, 2 * ref_n);
        if h0 || h1 || h2 {
            return Err(Error::NumericalInstability(format!("reference solve for asset {i} blew up")));
        }
        let d1 = (0..=ref_n / 2).map(|k| (half[k] - coarse[2 * k]).abs()).fold(0.0, f64::max);
        let d2 = (0..=ref_n / 2).map(|k| (coarse[2 * k] - fine[4 * k]).abs()).fold(0.0, f64::max);
        let estimate = (d1 / d2).log2();
        let order = if estimate > 0.0 && estimate < 3.0 {
            estimate
        } else {
            1.0 + spec.params.assets[i].alpha
        };
        orders.push(order);
        let q = 2f64.powf(order);
        let reference: Vec<f64> = (0..=ref_n)
            .map(|k| fine[2 * k] + (fine[2 * k] - coarse[k]) / (q - 1.0))
            .collect();
        for &n in ns {
            let (y, hit) = solve_component(spec, i, n);
            if hit {
                return Err(Error::NumericalInstability(format!("solve for asset {i} at n = {n} blew up")));
            }
            let stride = ref_n / n;
            let err = (0..=n).map(|k| (y[k] - reference[k * stride]).abs()).fold(0.0, f64::max);
            errors[i].push(err);
        }
    }
    Ok(ConvergenceReport {
        ns: ns.to_vec(),
        errors,
        reference_order: orders,
    })
}
