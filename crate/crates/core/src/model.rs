//! Model parameters, rate curve and simulation grid.

use crate::error::{invalid, Result};
use crate::kernels::KernelSpec;
use crate::stabilizer::Stabilizer;

/// Per-asset parameters of the Volterra square-root variance and its stock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssetParams {
    /// Fractional kernel exponent in (1/2, 1].
    pub alpha: f64,
    /// Mean-reversion rate.
    pub lambda: f64,
    /// Vol-of-vol.
    pub nu: f64,
    /// Risk premium: market price of risk is θ√V.
    pub theta: f64,
    /// Correlation between the stock and variance Brownian motions.
    pub rho: f64,
    /// Constant drift level μ0 of the variance.
    pub mu0: f64,
    /// Variance scale c = Var(V_0)/(ν² x∞).
    pub c: f64,
}

impl AssetParams {
    pub fn kernel(&self) -> KernelSpec {
        KernelSpec {
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }

    /// Long-run mean x∞ = μ0/λ, which is also E[V_0].
    pub fn x_inf(&self) -> f64 {
        self.mu0 / self.lambda
    }

    /// Var(V_0) = c ν² x∞.
    pub fn v0_var(&self) -> f64 {
        self.c * self.nu * self.nu * self.x_inf()
    }

    fn validate(&self, i: usize) -> Result<()> {
        let field = |name: &str| format!("assets[{i}].{name}");
        KernelSpec::new(self.alpha, self.lambda).map_err(|_| {
            invalid(
                field("alpha/lambda"),
                format!(
                    "need 1/2 < alpha <= 1 and lambda > 0, got alpha = {}, lambda = {}",
                    self.alpha, self.lambda
                ),
            )
        })?;
        let checks = [
            ("nu", self.nu >= 0.0 && self.nu.is_finite(), "must be >= 0"),
            ("theta", self.theta >= 0.0 && self.theta.is_finite(), "must be >= 0"),
            ("rho", self.rho.abs() <= 1.0, "must satisfy |rho| <= 1"),
            ("mu0", self.mu0 >= 0.0 && self.mu0.is_finite(), "must be >= 0"),
            ("c", self.c >= 0.0 && self.c.is_finite(), "must be >= 0"),
        ];
        for (name, ok, msg) in checks {
            if !ok {
                return Err(invalid(field(name), msg));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant short rate: `rates[j]` applies on [starts[j], starts[j+1]).
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    starts: Vec<f64>,
    rates: Vec<f64>,
}

impl Default for RateCurve {
    fn default() -> Self {
        Self::zero()
    }
}

impl RateCurve {
    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(r: f64) -> Self {
        Self {
            starts: vec![0.0],
            rates: vec![r],
        }
    }

    pub fn new(starts: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if starts.is_empty() || starts.len() != rates.len() {
            return Err(invalid("rate_curve", "needs matching, non-empty start and rate lists"));
        }
        if starts[0] != 0.0 {
            return Err(invalid("rate_curve.starts", "first start time must be 0"));
        }
        if starts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("rate_curve.starts", "must be strictly increasing"));
        }
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(invalid("rate_curve.rates", "must be finite and >= 0"));
        }
        Ok(Self { starts, rates })
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, t: f64) -> f64 {
        let j = self.starts.partition_point(|&s| s <= t).max(1) - 1;
        self.rates[j]
    }

    /// ∫_a^b r(s) ds for a ≤ b.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for (j, (&s, &r)) in self.starts.iter().zip(&self.rates).enumerate() {
            let e = self.starts.get(j + 1).copied().unwrap_or(f64::INFINITY);
            let lo = a.max(s);
            let hi = b.min(e);
            if hi > lo {
                total += r * (hi - lo);
            }
        }
        total
    }

    pub fn is_zero(&self) -> bool {
        self.rates.iter().all(|&r| r == 0.0)
    }
}

/// Full market and model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub assets: Vec<AssetParams>,
    pub rate: RateCurve,
    pub horizon: f64,
    pub x0: f64,
}

impl ModelParams {
    pub fn new(assets: Vec<AssetParams>, rate: RateCurve, horizon: f64, x0: f64) -> Result<Self> {
        if assets.is_empty() {
            return Err(invalid("assets", "at least one asset is required"));
        }
        for (i, a) in assets.iter().enumerate() {
            a.validate(i)?;
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive and finite"));
        }
        if !x0.is_finite() {
            return Err(invalid("x0", "must be finite"));
        }
        Ok(Self {
            assets,
            rate,
            horizon,
            x0,
        })
    }

    /// Two-asset calibration: α = (0.9, 0.6), λ = (0.2, 0.6), ν = (0.4, 0.2),
    /// θ = (0.1, 0.1), ρ = (-0.7, -0.55), μ0 = (0.2, 0.25), c = (0.01, 0.03),
    /// T = 1, x0 = 1, r ≡ 0.
    pub fn two_asset_example() -> Self {
        let assets = vec![
            AssetParams {
                alpha: 0.9,
                lambda: 0.2,
                nu: 0.4,
                theta: 0.1,
                rho: -0.7,
                mu0: 0.2,
                c: 0.01,
            },
            AssetParams {
                alpha: 0.6,
                lambda: 0.6,
                nu: 0.2,
                theta: 0.1,
                rho: -0.55,
                mu0: 0.25,
                c: 0.03,
            },
        ];
        Self::new(assets, RateCurve::zero(), 1.0, 1.0).expect("example parameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.assets.len()
    }

    /// One stabilizer per asset, tabulated on `grid`.
    pub fn stabilizers(&self, grid: &[f64]) -> Result<Vec<Stabilizer>> {
        self.assets
            .iter()
            .map(|a| Stabilizer::for_kernel(a.kernel(), a.c, grid))
            .collect()
    }

    /// e^{-∫_t^T r}.
    pub fn discount(&self, t: f64) -> f64 {
        (-self.rate.integral(t, self.horizon)).exp()
    }
}

/// Uniform grid t_k = k T/n, k = 0..n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub n_steps: usize,
    pub horizon: f64,
}

impl SimGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be >= 1"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive and finite"));
        }
        Ok(Self { n_steps, horizon })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}
