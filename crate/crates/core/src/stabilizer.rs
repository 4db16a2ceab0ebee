//! The stabilizer ς_{α,λ,c}: the deterministic vol-of-vol modulation under
//! which the Volterra square-root process keeps a constant mean and variance.
//!
//! It solves c λ² (1 - R(t)²) = (f² * ς²)(t) and is given by the series
//!
//! ς²_{α,λ,c}(t) = c λ^{2-1/α} ς_α²(λ^{1/α} t),  ς_α²(τ) = 2 τ^{1-α} Σ_k (-1)^k c_k τ^{αk}.
//!
//! The series has infinite radius of convergence, but alternating terms
//! cancel catastrophically for large τ. Evaluation is therefore restricted to
//! a trust radius, beyond which ς is blended into its long-time limit
//! √c λ / ‖f_{α,λ}‖_{L²}.

use crate::error::{invalid, Error, Result};
use crate::kernels::{KernelSpec, ResolventTable};
use crate::quadrature::adaptive;
use crate::special::{ln_gamma, rgamma, beta};

/// Hard cap on the number of series coefficients.
pub const MAX_TERMS: usize = 200;
/// Relative tolerance on consecutive partial sums inside the trust radius.
const PARTIAL_SUM_TOL: f64 = 1e-8;
/// Truncation: drop terms below this fraction of the sum.
const TERM_RATIO_TOL: f64 = 1e-12;
/// Largest normalised time considered when scanning for the trust radius.
const TAU_SCAN_MAX: f64 = 1e3;
/// Values below -NEG_TOL·scale count as genuinely negative.
const NEG_TOL: f64 = 1e-12;

/// Series coefficients c_0..c_K of the normalised stabilizer.
///
/// c_0 = Γ(α)²/(Γ(2α-1)Γ(2-α)), and for k ≥ 1
/// c_k = Γ(α)²Γ(α(k+1)) / (Γ(2α-1)Γ(αk+2-α))
///       · [(a*b)_k - α(k+1) Σ_{ℓ=1}^{k} B(α(ℓ+2)-1, α(k-ℓ-1)+2) (b*b)_ℓ c_{k-ℓ}]
/// with a_k = 1/Γ(αk+1), b_k = 1/Γ(α(k+1)).
pub fn stabilizer_coefficients(alpha: f64, k_max: usize) -> Result<Vec<f64>> {
    Ok(coefficients_with_error(alpha, k_max)?.0)
}

/// Coefficients together with an estimate of their absolute error.
///
/// The bracket above is a difference of nearly equal quantities, so the
/// relative error of c_k grows quickly with k. The estimate is the
/// discrepancy with the equivalent form
/// (a*a)_{k+1} = 2 Σ_{j=0}^{k} (b*b)_j c_{k-j} B(α(j+2)-1, α(k-j-1)+2),
/// which rounds differently and amplifies Gamma-value errors differently.
pub fn coefficients_with_error(alpha: f64, k_max: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "stabilizer coefficients need 1/2 < alpha < 1, got {alpha}"
        )));
    }
    let n = k_max + 1;
    let a: Vec<f64> = (0..=n).map(|k| rgamma(alpha * k as f64 + 1.0)).collect();
    let b: Vec<f64> = (0..n).map(|k| rgamma(alpha * (k as f64 + 1.0))).collect();
    let cauchy = |x: &[f64], y: &[f64], k: usize| (0..=k).map(|l| x[l] * y[k - l]).sum::<f64>();
    let bb: Vec<f64> = (0..n).map(|k| cauchy(&b, &b, k)).collect();
    let lg_a = ln_gamma(alpha);
    let lg_2a1 = ln_gamma(2.0 * alpha - 1.0);
    let weight = |l: usize, k: usize| {
        beta(alpha * (l as f64 + 2.0) - 1.0, alpha * (k as f64 - l as f64 - 1.0) + 2.0)
    };
    let mut c: Vec<f64> = Vec::with_capacity(n);
    let mut alt: Vec<f64> = Vec::with_capacity(n);
    for k in 0..n {
        let kf = k as f64;
        let pref = (2.0 * lg_a + ln_gamma(alpha * (kf + 1.0))
            - lg_2a1
            - ln_gamma(alpha * kf + 2.0 - alpha))
            .exp();
        let s: f64 = (1..=k).map(|l| weight(l, k) * bb[l] * c[k - l]).sum();
        c.push(pref * (cauchy(&a, &b, k) - alpha * (kf + 1.0) * s));
        let s_alt: f64 = (1..=k).map(|j| weight(j, k) * bb[j] * alt[k - j]).sum();
        alt.push((0.5 * cauchy(&a, &a, k + 1) - s_alt) / (bb[0] * weight(0, k)));
    }
    let err = c
        .iter()
        .zip(&alt)
        .map(|(x, y)| {
            let e = (x - y).abs() + 4.0 * f64::EPSILON * x.abs();
            if e.is_finite() { e } else { f64::INFINITY }
        })
        .collect();
    for x in c.iter_mut().filter(|x| !x.is_finite()) {
        *x = 0.0;
    }
    Ok((c, err))
}

/// Σ_k (-1)^k c_k τ^{αk} and Σ_k |c_k τ^{αk}| (the cancellation scale).
fn series_sum(coeffs: &[f64], alpha: f64, tau: f64) -> (f64, f64) {
    if tau == 0.0 {
        return (coeffs[0], coeffs[0].abs());
    }
    let x = -tau.powf(alpha);
    let mut p = 1.0;
    let mut s = 0.0;
    let mut abs = 0.0;
    for &ck in coeffs {
        let term = ck * p;
        s += term;
        abs += term.abs();
        p *= x;
    }
    (s, abs)
}

/// Stabilizer tabulated on a grid together with its series data.
#[derive(Debug, Clone)]
pub struct StabilizerTable {
    pub spec: KernelSpec,
    pub c: f64,
    pub coeffs: Vec<f64>,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// √c λ / ‖f_{α,λ}‖_{L²}.
    pub limit: f64,
    /// Largest time at which the series is trusted.
    pub trust_time: f64,
    blend_width: f64,
    time_scale: f64,
}

impl StabilizerTable {
    pub fn new(spec: KernelSpec, c: f64, grid: &[f64]) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid("c", format!("variance scale must be >= 0, got {c}")));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.first().is_some_and(|&t| t < 0.0) {
            return Err(invalid("grid", "must be non-negative and strictly increasing"));
        }
        let alpha = spec.alpha;
        let (full, errors) = coefficients_with_error(alpha, MAX_TERMS)?;
        let tau_trust = trust_radius(&full, &errors, alpha);
        let coeffs = truncate(&full, alpha, tau_trust);
        let time_scale = spec.lambda.powf(1.0 / alpha);
        let limit = c.sqrt() * spec.lambda / spec.density_l2_norm();
        let max_step = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let trust_time = tau_trust / time_scale;
        let blend_width = if max_step > 0.0 { max_step } else { 0.05 * trust_time };
        let mut table = Self {
            spec,
            c,
            coeffs,
            grid: grid.to_vec(),
            values: Vec::new(),
            limit,
            trust_time,
            blend_width,
            time_scale,
        };
        table.values = grid.iter().map(|&t| table.eval(t)).collect::<Result<_>>()?;
        Ok(table)
    }

    /// ς(t) ≥ 0.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::Domain(format!("stabilizer needs t >= 0, got {t}")));
        }
        if self.c == 0.0 || t == 0.0 {
            return Ok(0.0);
        }
        if t <= self.trust_time {
            return self.series_value(t);
        }
        let edge = self.series_value(self.trust_time)?;
        let w = ((t - self.trust_time) / self.blend_width).min(1.0);
        Ok(edge + w * (self.limit - edge))
    }

    /// ς(t), clamping any roundoff-level negativity to zero.
    pub fn value(&self, t: f64) -> f64 {
        self.eval(t.max(0.0)).unwrap_or(0.0)
    }

    /// ς²(t)/t^{1-α} = 2cλ Σ(-1)^k c_k (λ^{1/α}t)^{αk}, finite at t = 0.
    pub fn sigma2_over_power(&self, t: f64) -> f64 {
        if t <= self.trust_time {
            let (s, _) = series_sum(&self.coeffs, self.spec.alpha, self.time_scale * t);
            2.0 * self.c * self.spec.lambda * s.max(0.0)
        } else {
            self.value(t).powi(2) / t.powf(1.0 - self.spec.alpha)
        }
    }

    fn series_value(&self, t: f64) -> Result<f64> {
        let alpha = self.spec.alpha;
        let tau = self.time_scale * t;
        let (s, abs) = series_sum(&self.coeffs, alpha, tau);
        if s < -NEG_TOL * abs {
            return Err(Error::NumericalInstability(format!(
                "stabilizer series negative ({s:e}) at t = {t}; use more terms or a smaller horizon"
            )));
        }
        let scale = self.c * self.spec.lambda.powf(2.0 - 1.0 / alpha);
        Ok((scale * 2.0 * tau.powf(1.0 - alpha) * s.max(0.0)).sqrt())
    }

    /// max ς over the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Largest normalised τ such that on [0, τ] the series has converged, stays
/// positive, and its propagated coefficient error plus summation roundoff is
/// below `PARTIAL_SUM_TOL` relative to the sum.
fn trust_radius(coeffs: &[f64], errors: &[f64], alpha: f64) -> f64 {
    let mut tau = 1e-3;
    let mut trusted = 0.0;
    while tau <= TAU_SCAN_MAX {
        let x = tau.powf(alpha);
        let mut p = 1.0;
        let (mut s, mut abs, mut bound) = (0.0, 0.0, 0.0);
        let mut last = f64::INFINITY;
        for (k, (&ck, &ek)) in coeffs.iter().zip(errors).enumerate() {
            let term = if k % 2 == 0 { ck * p } else { -ck * p };
            s += term;
            abs += term.abs();
            bound += ek * p;
            last = term.abs();
            p *= x;
        }
        let uncertain = bound + abs * f64::EPSILON;
        if !(s > 0.0) || !(uncertain < PARTIAL_SUM_TOL * s) || last >= PARTIAL_SUM_TOL * s {
            break;
        }
        trusted = tau;
        tau *= 1.05;
    }
    trusted
}

/// Shortest prefix whose omitted terms are negligible up to `tau`.
fn truncate(coeffs: &[f64], alpha: f64, tau: f64) -> Vec<f64> {
    let (s, _) = series_sum(coeffs, alpha, tau);
    let x = tau.powf(alpha);
    let mut keep = coeffs.len();
    for k in (1..coeffs.len()).rev() {
        let term = (coeffs[k] * x.powi(k as i32)).abs();
        if term >= TERM_RATIO_TOL * s.abs() {
            keep = (k + 2).min(coeffs.len());
            break;
        }
    }
    coeffs[..keep].to_vec()
}

/// Stabilizer for any admissible kernel: the series table for α < 1 and the
/// constant √(2cλ) in the exponential case α = 1.
#[derive(Debug, Clone)]
pub enum Stabilizer {
    Series(StabilizerTable),
    Constant(f64),
}

impl Stabilizer {
    pub fn for_kernel(spec: KernelSpec, c: f64, grid: &[f64]) -> Result<Self> {
        if spec.is_exponential() {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(invalid("c", format!("variance scale must be >= 0, got {c}")));
            }
            Ok(Stabilizer::Constant((2.0 * c * spec.lambda).sqrt()))
        } else {
            StabilizerTable::new(spec, c, grid).map(Stabilizer::Series)
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Stabilizer::Series(table) => table.value(t),
            Stabilizer::Constant(v) => *v,
        }
    }

    pub fn limit(&self) -> f64 {
        match self {
            Stabilizer::Series(table) => table.limit,
            Stabilizer::Constant(v) => *v,
        }
    }

    /// sup of ς over [0, horizon], sampled on 1001 points.
    pub fn sup_norm(&self, horizon: f64) -> f64 {
        match self {
            Stabilizer::Series(_) => (0..=1000)
                .map(|j| self.value(horizon * j as f64 / 1000.0))
                .fold(0.0, f64::max),
            Stabilizer::Constant(v) => *v,
        }
    }
}

/// sup over the resolvent grid of |c λ² (1 - R(t)²) - (f² * ς²)(t)|.
pub fn functional_equation_residual(table: &StabilizerTable, resolvent: &ResolventTable) -> f64 {
    if table.c == 0.0 {
        return 0.0;
    }
    resolvent
        .grid
        .iter()
        .zip(&resolvent.r_values)
        .map(|(&t, &r)| {
            let lhs = table.c * table.spec.lambda.powi(2) * (1.0 - r * r);
            (lhs - density_sq_conv(table, t)).abs()
        })
        .fold(0.0, f64::max)
}

/// Same residual scaled by c λ².
pub fn relative_functional_equation_residual(table: &StabilizerTable, resolvent: &ResolventTable) -> f64 {
    if table.c == 0.0 {
        return 0.0;
    }
    functional_equation_residual(table, resolvent) / (table.c * table.spec.lambda.powi(2))
}

/// (f² * ς²)(t) = ∫_0^t f(t-s)² ς(s)² ds.
pub fn density_sq_conv(table: &StabilizerTable, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let spec = table.spec;
    let alpha = spec.alpha;
    let half = 0.5 * t;
    // s = w^{1/(2-α)} on [0, t/2] absorbs the s^{1-α} factor of ς²
    let q = 1.0 / (2.0 - alpha);
    let left = adaptive(
        |w: f64| {
            let s = w.powf(q);
            spec.density(t - s).powi(2) * table.sigma2_over_power(s)
        },
        0.0,
        half.powf(2.0 - alpha),
        0.0,
        1e-12,
    )
    .value
        * q;
    // t - s = w^p, p = 1/(2α-1), absorbs the (t-s)^{2α-2} factor of f²
    let p = 1.0 / (2.0 * alpha - 1.0);
    let right = adaptive(
        |w: f64| {
            let u = w.powf(p);
            spec.density_regular(u).powi(2) * table.value(t - u).powi(2)
        },
        0.0,
        half.powf(2.0 * alpha - 1.0),
        0.0,
        1e-12,
    )
    .value
        * p;
    left + right
}
