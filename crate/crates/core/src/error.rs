use thiserror::Error;

/// Errors produced by the numerical core and the streaming harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (factorization failed with jitter {jitter:e})")]
    NotPsd { jitter: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Schur complement {schur:e} is not positive (tolerance {tol:e})")]
    SchurNotPositive { schur: f64, tol: f64 },

    #[error("forgetting factor {0} outside (0, 1]")]
    InvalidLambda(f64),

    #[error("series too short: {0}")]
    TooShort(String),

    #[error("no records to summarize")]
    EmptyRecords,

    #[error("MAPE undefined: a target is (numerically) zero")]
    MapeUndefined,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
