use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {constraint}")]
    InvalidParameter { field: String, constraint: String },

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("covariance factorisation failed for {block}: {reason}")]
    Cholesky { block: String, reason: String },

    #[error("Riccati solution blows up at t_max ~ {t_max:.6} (last valid time {last_valid:.6}, horizon {horizon})")]
    Blowup {
        t_max: f64,
        last_valid: f64,
        horizon: f64,
    },

    #[error("non-finite wealth on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, constraint: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.into(),
        constraint: constraint.into(),
    }
}
