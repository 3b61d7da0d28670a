use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample has no rows")]
    EmptySample,

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    /// The variance estimate is zero, so the standardized statistic is undefined.
    #[error("variance estimate is zero; the standardized statistic is undefined for this sample")]
    DegenerateVariance,

    #[error("quadrature oracle accepts at most {max} rows, got {got}")]
    OracleTooLarge { max: usize, got: usize },

    #[error("quadrature refinement did not converge (relative change {change:.3e})")]
    NonConvergent { change: f64 },

    #[error("invalid vine specification: {0}")]
    InvalidVine(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
