//! Fractional kernels K_α(t) = t^{α-1}/Γ(α), their λ-resolvents
//! R_{α,λ}(t) = E_α(-λt^α) and the resolvent densities f_{α,λ} = -R'_{α,λ}.
//!
//! Mittag-Leffler values come from the defining power series while the
//! normalised argument τ = x^{1/α} stays small. Beyond that the series is
//! swamped by cancellation, and the Laplace-type integral representation
//!
//! E_α(-τ^α) = sin(απ)/(απ) ∫_0^∞ exp(-τ u^{1/α}) / (u² + 2u cos(απ) + 1) du
//!
//! is used instead. Its integrand is positive, so it keeps full relative
//! accuracy for arbitrarily large arguments.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::quadrature::adaptive;
use crate::special::{gamma, rgamma};

/// Normalised argument below which the power series is used.
const SERIES_TAU_MAX: f64 = 4.0;
/// exp(-TAIL_EXPONENT) is negligible against double precision.
const TAIL_EXPONENT: f64 = 45.0;

/// Fractional kernel exponent and mean-reversion rate of one asset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub alpha: f64,
    pub lambda: f64,
}

impl KernelSpec {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha > 0.5 && alpha <= 1.0) {
            return Err(invalid("alpha", format!("must lie in (1/2, 1], got {alpha}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        Ok(Self { alpha, lambda })
    }

    pub fn is_exponential(&self) -> bool {
        self.alpha == 1.0
    }

    /// R_{α,λ}(t) = E_α(-λ t^α).
    pub fn resolvent(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        if self.is_exponential() {
            return (-self.lambda * t).exp();
        }
        ml_neg(self.alpha, MlBeta::One, self.lambda * t.powf(self.alpha))
    }

    /// f_{α,λ}(t) = λ t^{α-1} E_{α,α}(-λ t^α); +∞ at t = 0 when α < 1.
    pub fn density(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return if self.is_exponential() {
                self.lambda
            } else {
                f64::INFINITY
            };
        }
        t.powf(self.alpha - 1.0) * self.density_regular(t)
    }

    /// t^{1-α} f_{α,λ}(t) = λ E_{α,α}(-λ t^α), bounded on [0, ∞).
    pub fn density_regular(&self, t: f64) -> f64 {
        if self.is_exponential() {
            return self.lambda * (-self.lambda * t.max(0.0)).exp();
        }
        if t <= 0.0 {
            return self.lambda * rgamma(self.alpha);
        }
        self.lambda * ml_neg(self.alpha, MlBeta::Alpha, self.lambda * t.powf(self.alpha))
    }

    /// ‖f_{α,λ}‖_{L²(0,∞)}.
    pub fn density_l2_norm(&self) -> f64 {
        if self.is_exponential() {
            return (0.5 * self.lambda).sqrt();
        }
        (self.lambda.powf(1.0 / self.alpha) * unit_density_l2_sq(self.alpha)).sqrt()
    }
}

/// K_α(t) = t^{α-1}/Γ(α).
pub fn kernel_eval(spec: &KernelSpec, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("kernel needs t > 0, got {t}")));
    }
    Ok(t.powf(spec.alpha - 1.0) * rgamma(spec.alpha))
}

/// E_α(z) for 0 < α ≤ 1 and z ≤ 0.
pub fn mittag_leffler(alpha: f64, z: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("Mittag-Leffler needs 0 < alpha <= 1, got {alpha}")));
    }
    if !(z <= 0.0) {
        return Err(Error::Domain(format!("Mittag-Leffler needs z <= 0, got {z}")));
    }
    if alpha == 1.0 {
        return Ok(z.exp());
    }
    Ok(ml_neg(alpha, MlBeta::One, -z))
}

/// E_{α,α}(z) for 0 < α ≤ 1 and z ≤ 0.
pub fn mittag_leffler_alpha_alpha(alpha: f64, z: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("Mittag-Leffler needs 0 < alpha <= 1, got {alpha}")));
    }
    if !(z <= 0.0) {
        return Err(Error::Domain(format!("Mittag-Leffler needs z <= 0, got {z}")));
    }
    if alpha == 1.0 {
        return Ok(z.exp());
    }
    Ok(ml_neg(alpha, MlBeta::Alpha, -z))
}

/// Defining series Σ z^k/Γ(αk+β), compensated summation.
pub fn ml_series(alpha: f64, beta: f64, z: f64) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut zk = 1.0;
    let mut prev = f64::INFINITY;
    for k in 0..1000 {
        let term = zk * rgamma(alpha * k as f64 + beta);
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        let total = sum + comp;
        if k > 3 && term.abs() <= 1e-17 * total.abs() && term.abs() <= prev {
            break;
        }
        prev = term.abs();
        zk *= z;
    }
    sum + comp
}

/// Large-argument expansion E_{α,β}(-x) ≈ Σ_{k=1}^{K} (-1)^{k+1} x^{-k}/Γ(β-αk).
pub fn ml_asymptotic(alpha: f64, beta: f64, x: f64, terms: usize) -> f64 {
    let mut s = 0.0;
    let mut xk = 1.0;
    for k in 1..=terms {
        xk /= x;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        s += sign * xk * rgamma(beta - alpha * k as f64);
    }
    s
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum MlBeta {
    One,
    Alpha,
}

/// E_{α,β}(-x) for β ∈ {1, α}, 0 < α < 1, x ≥ 0.
fn ml_neg(alpha: f64, beta: MlBeta, x: f64) -> f64 {
    let b = match beta {
        MlBeta::One => 1.0,
        MlBeta::Alpha => alpha,
    };
    if x == 0.0 {
        return rgamma(b);
    }
    if x.powf(1.0 / alpha) <= SERIES_TAU_MAX {
        return ml_series(alpha, b, -x);
    }
    ml_integral(alpha, beta, x)
}

fn ml_integral(alpha: f64, beta: MlBeta, x: f64) -> f64 {
    let tau = x.powf(1.0 / alpha);
    let phi = alpha * PI;
    let cphi = phi.cos();
    let inv_a = 1.0 / alpha;
    let upper = (TAIL_EXPONENT / tau).powf(alpha);
    let integrand = |u: f64| {
        let s = u.powf(inv_a);
        let num = match beta {
            MlBeta::One => (-tau * s).exp(),
            MlBeta::Alpha => s * (-tau * s).exp(),
        };
        num / (u * u + 2.0 * u * cphi + 1.0)
    };
    // the denominator peaks at u = -cos(απ) when α > 1/2
    let peak = (-cphi).max(0.0);
    let mut total = 0.0;
    if peak > 0.0 && peak < upper {
        total += adaptive(integrand, 0.0, peak, 0.0, 1e-14).value;
        total += adaptive(integrand, peak, upper, 0.0, 1e-14).value;
    } else {
        total += adaptive(integrand, 0.0, upper, 0.0, 1e-14).value;
    }
    let scale = phi.sin() / phi;
    match beta {
        MlBeta::One => scale * total,
        MlBeta::Alpha => tau.powf(1.0 - alpha) * scale * total,
    }
}

/// ∫_0^∞ f_{α,1}(t)² dt for 1/2 < α < 1.
fn unit_density_l2_sq(alpha: f64) -> f64 {
    let unit = KernelSpec { alpha, lambda: 1.0 };
    // [0, 1]: t = w^p, p = 1/(2α-1), absorbs the t^{2α-2} singularity
    let p = 1.0 / (2.0 * alpha - 1.0);
    let head = adaptive(
        |w: f64| {
            let g = unit.density_regular(w.powf(p));
            g * g
        },
        0.0,
        1.0,
        0.0,
        1e-13,
    )
    .value
        * p;
    // [1, ∞): t = 1/v
    let tail = adaptive(
        |v: f64| {
            if v <= 0.0 {
                return 0.0;
            }
            let f = unit.density(1.0 / v);
            f * f / (v * v)
        },
        0.0,
        1.0,
        0.0,
        1e-13,
    )
    .value;
    head + tail
}

/// |R(t) + λ(K*R)(t) - 1| with the convolution computed by adaptive
/// quadrature after the substitution u = w^{1/α}.
pub fn resolvent_residual(spec: &KernelSpec, t: f64) -> f64 {
    if t <= 0.0 {
        return (spec.resolvent(0.0) - 1.0).abs();
    }
    let a = spec.alpha;
    let conv = adaptive(
        |w: f64| spec.resolvent(t - w.powf(1.0 / a)),
        0.0,
        t.powf(a),
        0.0,
        1e-14,
    )
    .value
        / (a * gamma(a));
    (spec.resolvent(t) + spec.lambda * conv - 1.0).abs()
}

/// |(K_α ⋆ r)(t) - 1| for the first-kind resolvent r(s) = s^{-α}/Γ(1-α).
pub fn first_kind_resolvent_check(spec: &KernelSpec, t: f64) -> Result<f64> {
    let a = spec.alpha;
    if a >= 1.0 {
        return Err(Error::Domain("first-kind resolvent needs alpha < 1".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("first-kind resolvent needs t > 0, got {t}")));
    }
    let half = 0.5 * t;
    // s = w^{1/(1-α)} on [0, t/2]: s^{-α} ds = dw/(1-α)
    let q = 1.0 / (1.0 - a);
    let left = adaptive(
        |w: f64| (t - w.powf(q)).powf(a - 1.0),
        0.0,
        half.powf(1.0 - a),
        0.0,
        1e-14,
    )
    .value
        * q;
    // t - s = w^{1/α} on [t/2, t]: (t-s)^{α-1} ds = dw/α
    let right = adaptive(
        |w: f64| (t - w.powf(1.0 / a)).powf(-a),
        0.0,
        half.powf(a),
        0.0,
        1e-14,
    )
    .value
        / a;
    Ok(((left + right) * rgamma(a) * rgamma(1.0 - a) - 1.0).abs())
}

/// Resolvent and density tabulated on a time grid.
#[derive(Debug, Clone)]
pub struct ResolventTable {
    pub spec: KernelSpec,
    pub grid: Vec<f64>,
    pub r_values: Vec<f64>,
    /// f at each grid time; `f64::INFINITY` marks the singular point t = 0.
    pub f_values: Vec<f64>,
    pub l2_norm_f: f64,
}

impl ResolventTable {
    pub fn new(spec: KernelSpec, grid: &[f64]) -> Result<Self> {
        if grid.first() != Some(&0.0) {
            return Err(invalid("grid", "must start at 0"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("grid", "must be strictly increasing"));
        }
        if !(spec.alpha > 0.5) {
            return Err(invalid("alpha", "density is not square integrable for alpha <= 1/2"));
        }
        Ok(Self {
            spec,
            grid: grid.to_vec(),
            r_values: grid.iter().map(|&t| spec.resolvent(t)).collect(),
            f_values: grid.iter().map(|&t| spec.density(t)).collect(),
            l2_norm_f: spec.density_l2_norm(),
        })
    }

    /// Largest resolvent-equation residual over the grid.
    pub fn max_residual(&self) -> f64 {
        self.grid
            .iter()
            .map(|&t| resolvent_residual(&self.spec, t))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_values() {
        let k1 = KernelSpec::new(1.0, 0.3).unwrap();
        assert_eq!(kernel_eval(&k1, 0.5).unwrap(), 1.0);
        let k = KernelSpec::new(0.9, 0.2).unwrap();
        assert_relative_eq!(kernel_eval(&k, 1.0).unwrap(), 0.935_778_720_912_872_79, max_relative = 1e-14);
        let k = KernelSpec::new(0.6, 0.6).unwrap();
        assert_relative_eq!(kernel_eval(&k, 0.25).unwrap(), 1.169_158_064_031_190_55, max_relative = 1e-14);
        assert!(kernel_eval(&k, 0.0).is_err());
    }

    #[test]
    fn kernel_rejects_bad_exponents() {
        assert!(KernelSpec::new(0.5, 1.0).is_err());
        assert!(KernelSpec::new(1.2, 1.0).is_err());
        assert!(KernelSpec::new(0.7, 0.0).is_err());
    }

    #[test]
    fn mittag_leffler_trivial_values() {
        assert_eq!(mittag_leffler(0.7, 0.0).unwrap(), 1.0);
        assert_relative_eq!(mittag_leffler(1.0, -1.0).unwrap(), (-1f64).exp(), max_relative = 1e-15);
        assert!(mittag_leffler(1.5, -1.0).is_err());
        assert!(mittag_leffler(0.5, 1.0).is_err());
    }

    #[test]
    fn mittag_leffler_frozen_values() {
        assert_relative_eq!(mittag_leffler(0.9, -0.2).unwrap(), 0.814_104_081_794_812_252_96, max_relative = 1e-13);
        assert_relative_eq!(mittag_leffler(0.6, -3.0).unwrap(), 0.159_703_480_265_091_216_15, max_relative = 1e-12);
        assert_relative_eq!(mittag_leffler(0.75, -4.5).unwrap(), 0.077_054_661_036_949_091_44, max_relative = 1e-12);
        assert_relative_eq!(mittag_leffler(0.9, -50.0).unwrap(), 0.002_175_353_076_856_978_51, max_relative = 1e-12);
    }

    #[test]
    fn series_and_integral_agree_at_switch() {
        for &alpha in &[0.55, 0.6, 0.75, 0.9, 0.97] {
            for &scale in &[0.25, 0.5, 1.0] {
                let x = scale * SERIES_TAU_MAX.powf(alpha);
                let s1 = ml_series(alpha, 1.0, -x);
                let i1 = ml_integral(alpha, MlBeta::One, x);
                assert_relative_eq!(s1, i1, max_relative = 1e-11);
                let sa = ml_series(alpha, alpha, -x);
                let ia = ml_integral(alpha, MlBeta::Alpha, x);
                assert_relative_eq!(sa, ia, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn large_argument_matches_asymptotics() {
        for &alpha in &[0.6, 0.8, 0.9] {
            let x = 1e4;
            let e = mittag_leffler(alpha, -x).unwrap();
            assert_relative_eq!(e, ml_asymptotic(alpha, 1.0, x, 8), max_relative = 1e-10);
            let ea = mittag_leffler_alpha_alpha(alpha, -x).unwrap();
            assert_relative_eq!(ea, ml_asymptotic(alpha, alpha, x, 8), max_relative = 1e-8);
        }
    }

    #[test]
    fn exponential_reduction() {
        let k = KernelSpec::new(1.0, 0.7).unwrap();
        let table = ResolventTable::new(k, &[0.0, 0.5, 1.0, 3.0]).unwrap();
        for (t, r) in table.grid.iter().zip(&table.r_values) {
            assert!((r - (-0.7 * t).exp()).abs() <= 1e-10);
        }
        assert_relative_eq!(table.l2_norm_f, (0.35f64).sqrt(), max_relative = 1e-15);
        assert_eq!(table.f_values[0], 0.7);
    }

    #[test]
    fn table_sentinel_and_start() {
        let k = KernelSpec::new(0.9, 0.2).unwrap();
        let table = ResolventTable::new(k, &[0.0, 0.1, 1.0]).unwrap();
        assert_eq!(table.r_values[0], 1.0);
        assert!(table.f_values[0].is_infinite());
        assert!(ResolventTable::new(k, &[0.1, 1.0]).is_err());
        assert!(ResolventTable::new(k, &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn unit_l2_norms() {
        assert_relative_eq!(unit_density_l2_sq(0.9), 0.514_539_026_153_607_92, max_relative = 1e-11);
        assert_relative_eq!(unit_density_l2_sq(0.6), 1.398_231_747_072_021_1, max_relative = 1e-11);
    }

    #[test]
    fn density_integrates_to_one_minus_resolvent() {
        let k = KernelSpec::new(0.6, 0.6).unwrap();
        let t: f64 = 2.0;
        // ∫_0^t f = 1 - R(t); singular start absorbed by s = w^{1/α}
        let int = adaptive(
            |w: f64| k.density_regular(w.powf(1.0 / k.alpha)),
            0.0,
            t.powf(k.alpha),
            0.0,
            1e-14,
        )
        .value
            / k.alpha;
        assert_relative_eq!(int, 1.0 - k.resolvent(t), max_relative = 1e-11);
    }

    #[test]
    fn residuals_small() {
        let k = KernelSpec::new(0.9, 0.2).unwrap();
        assert!(resolvent_residual(&k, 1.0) <= 1e-8);
        assert!(first_kind_resolvent_check(&k, 1.0).unwrap() <= 1e-8);
        let k = KernelSpec::new(0.6, 0.6).unwrap();
        assert!(first_kind_resolvent_check(&k, 0.5).unwrap() <= 1e-8);
        assert!(first_kind_resolvent_check(&KernelSpec::new(1.0, 1.0).unwrap(), 0.5).is_err());
    }
}
