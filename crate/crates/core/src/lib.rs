//! Optimal Merton portfolios under multivariate fake-stationary Volterra
//! square-root (rough Heston type) volatility.
//!
//! The crate is organised bottom-up:
//!
//! - [`special`] and [`quadrature`]: Gamma/Beta functions and integration rules.
//! - [`kernels`]: fractional kernels, Mittag-Leffler resolvents and their densities.
//! - [`stabilizer`]: the time-dependent vol-of-vol modulation that keeps the
//!   first two moments of the variance constant in time.
//! - [`model`] and [`simulate`]: model parameters and the integrated
//!   Euler-Maruyama path generator.
//! - [`riccati`]: fractional Adams solver for the Riccati-Volterra systems.
//! - [`strategy`]: optimal investment rules and closed-form value functions.
//! - [`verify`]: Monte Carlo checks of the optimality claims.

pub mod error;
pub mod kernels;
pub mod model;
pub mod quadrature;
pub mod riccati;
pub mod simulate;
pub mod special;
pub mod stabilizer;
pub mod stats;
pub mod strategy;
pub mod verify;

pub use error::{Error, Result};
pub use kernels::{KernelSpec, ResolventTable};
pub use model::{AssetParams, ModelParams, RateCurve, SimGrid};
pub use riccati::{RiccatiSolution, RiccatiSpec, Variant};
pub use simulate::{PathBundle, V0Mode, VarianceEngine};
pub use stabilizer::{Stabilizer, StabilizerTable};
pub use strategy::{StrategyValue, UtilityKind, UtilitySpec};





