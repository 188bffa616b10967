use thiserror::Error;

/// Errors raised across the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian: max |M - M^dagger| = {deviation:e}")]
    NotHermitian { deviation: f64 },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("state is not normalized: |norm^2 - 1| = {deviation:e}")]
    NotNormalized { deviation: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix exponential overflow (norm of exponent {norm:e})")]
    Overflow { norm: f64 },

    #[error("density matrix invalid: {0}")]
    InvalidDensity(String),

    #[error("ODE step too large: halving dt changed the result by {change:e} (limit {limit:e})")]
    StepTooLarge { change: f64, limit: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("series truncation bound not reached within {terms} terms")]
    SeriesTruncation { terms: usize },

    #[error("insufficient samples: {got} provided, at least {required} required")]
    InsufficientSamples { got: usize, required: usize },

    #[error("mixed measure tags in Monte Carlo input")]
    MixedMeasures,

    #[error("spin sum {s} has the wrong parity or range for N = {n}")]
    SpinParity { s: i64, n: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
