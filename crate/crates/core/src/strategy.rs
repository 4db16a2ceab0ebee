//! Optimal investment rules, the adjusted forward curve g_0 and the
//! closed-form value functions for power and exponential utility.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, SimGrid};
use crate::riccati::{RiccatiSolution, RiccatiSpec, Variant};
use crate::special::gamma;
use crate::stabilizer::Stabilizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UtilityKind {
    /// U(x) = x^γ/γ.
    Power,
    /// U(x) = -e^{-γx}/γ.
    Exponential,
}

impl UtilityKind {
    pub fn name(self) -> &'static str {
        match self {
            UtilityKind::Power => "power",
            UtilityKind::Exponential => "exponential",
        }
    }
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(UtilityKind::Power),
            "exponential" => Ok(UtilityKind::Exponential),
            other => Err(invalid("utility", format!("expected 'power' or 'exponential', got '{other}'"))),
        }
    }
}

/// Utility family and risk aversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub gamma: f64,
}

impl UtilitySpec {
    pub fn new(kind: UtilityKind, gamma: f64) -> Result<Self> {
        let ok = match kind {
            UtilityKind::Power => gamma > 0.0 && gamma < 1.0,
            UtilityKind::Exponential => gamma > 0.0 && gamma.is_finite(),
        };
        if !ok {
            let range = match kind {
                UtilityKind::Power => "0 < gamma < 1",
                UtilityKind::Exponential => "gamma > 0",
            };
            return Err(invalid("gamma", format!("{kind} utility needs {range}, got {gamma}")));
        }
        Ok(Self { kind, gamma })
    }

    pub fn power(gamma: f64) -> Result<Self> {
        Self::new(UtilityKind::Power, gamma)
    }

    pub fn exponential(gamma: f64) -> Result<Self> {
        Self::new(UtilityKind::Exponential, gamma)
    }

    pub fn utility(&self, x: f64) -> f64 {
        match self.kind {
            UtilityKind::Power => x.powf(self.gamma) / self.gamma,
            UtilityKind::Exponential => -(-self.gamma * x).exp() / self.gamma,
        }
    }

    /// General-correlation Riccati variant for this utility.
    pub fn variant(&self) -> Variant {
        match self.kind {
            UtilityKind::Power => Variant::PowerGeneral,
            UtilityKind::Exponential => Variant::ExponentialGeneral,
        }
    }

    fn check_variant(&self, v: Variant) -> Result<()> {
        if v.is_power() != (self.kind == UtilityKind::Power) {
            return Err(invalid(
                "variant",
                format!("Riccati variant {v} does not match {} utility", self.kind),
            ));
        }
        Ok(())
    }
}

/// g_0^i(s) = E[V_0^i] + μ0_i s^{α_i}/Γ(α_i + 1).
pub fn g0_curve(params: &ModelParams, s: f64) -> Vec<f64> {
    params
        .assets
        .iter()
        .map(|a| a.x_inf() + a.mu0 * s.max(0.0).powf(a.alpha) / gamma(a.alpha + 1.0))
        .collect()
}

/// Per-asset multiplier of √V_t in the optimal strategy at time t.
pub fn optimal_rule(
    util: &UtilitySpec,
    params: &ModelParams,
    sol: &RiccatiSolution,
    stabilizers: &[Stabilizer],
    t: f64,
) -> Result<Vec<f64>> {
    util.check_variant(sol.variant)?;
    sol.require_complete()?;
    let horizon = params.horizon;
    let (scale, denom) = match util.kind {
        UtilityKind::Power => (1.0, 1.0 - util.gamma),
        UtilityKind::Exponential => (params.discount(t), util.gamma),
    };
    Ok(params
        .assets
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let hedge = a.rho * a.nu * stabilizers[i].value(t) * sol.general_psi_at(i, horizon - t);
            scale * (a.theta + hedge) / denom
        })
        .collect())
}

fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    match n {
        0 => 0.0,
        1 => h * (values[0] + values[1]) / 2.0,
        _ => {
            // Simpson on an even prefix, 3/8 rule on the last three cells if n is odd
            let even = if n % 2 == 0 { n } else { n - 3 };
            let mut s = 0.0;
            for k in (0..even).step_by(2) {
                s += h / 3.0 * (values[k] + 4.0 * values[k + 1] + values[k + 2]);
            }
            if n % 2 == 1 {
                let k = even;
                s += 3.0 * h / 8.0 * (values[k] + 3.0 * values[k + 1] + 3.0 * values[k + 2] + values[k + 3]);
            }
            s
        }
    }
}

/// Σ_i ∫_0^T (a_i + F_i(s, ψ(T-s))) g_0^i(s) ds in general-correlation form,
/// by composite Simpson on the Riccati grid.
pub fn value_exponent(spec: &RiccatiSpec, sol: &RiccatiSolution) -> Result<f64> {
    sol.require_complete()?;
    let n = sol.n_steps();
    let t = spec.horizon();
    let h = t / n as f64;
    let delta = sol.delta;
    let integrand: Vec<f64> = (0..=n)
        .map(|k| {
            let s = if k == n { t } else { k as f64 * h };
            let g0 = g0_curve(&spec.params, s);
            (0..spec.params.dim())
                .map(|i| {
                    let psi = sol.psi[i][n - k];
                    delta * (spec.forcing(i) + spec.nonlinearity(i, s, psi)) * g0[i]
                })
                .sum()
        })
        .collect();
    Ok(simpson(&integrand, h))
}

/// Closed-form value at (x0, V_0 = E[V_0]).
pub fn value_function(util: &UtilitySpec, spec: &RiccatiSpec, sol: &RiccatiSolution, x0: f64) -> Result<f64> {
    util.check_variant(sol.variant)?;
    if util.kind == UtilityKind::Power {
        if (spec.gamma - util.gamma).abs() > 0.0 {
            return Err(invalid("gamma", "Riccati spec and utility disagree on gamma"));
        }
        if !(x0 > 0.0) {
            return Err(invalid("x0", "power utility needs x0 > 0"));
        }
    }
    let exponent = value_exponent(spec, sol)?;
    let g = util.gamma;
    let r_int = spec.params.rate.integral(0.0, spec.horizon());
    Ok(match util.kind {
        UtilityKind::Power => x0.powf(g) / g * (g * r_int + exponent).exp(),
        UtilityKind::Exponential => -(-g * r_int.exp() * x0).exp() / g * exponent.exp(),
    })
}

/// Deterministic rules on a simulation grid plus the analytic value.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyValue {
    pub util: UtilitySpec,
    pub times: Vec<f64>,
    /// pi_star[k][i]: multiplier of √V^i at times[k].
    pub pi_star: Vec<Vec<f64>>,
    pub value: f64,
}

impl StrategyValue {
    pub fn compute(util: &UtilitySpec, spec: &RiccatiSpec, sol: &RiccatiSolution, grid: &SimGrid) -> Result<Self> {
        let times = grid.times();
        let pi_star = times
            .iter()
            .map(|&t| optimal_rule(util, &spec.params, sol, &spec.stabilizers, t))
            .collect::<Result<Vec<_>>>()?;
        let value = value_function(util, spec, sol, spec.params.x0)?;
        Ok(Self {
            util: *util,
            times,
            pi_star,
            value,
        })
    }

    /// α*_{t_k} = π*_{t_k} √V_{t_k} for each asset; `v[i]` is (n+1) × paths.
    pub fn alpha_star(&self, v: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        v.iter()
            .enumerate()
            .map(|(i, vi)| DMatrix::from_fn(vi.nrows(), vi.ncols(), |k, q| self.pi_star[k][i] * vi[(k, q)].sqrt()))
            .collect()
    }
}
