use thiserror::Error;

/// Errors raised by the time-frequency algebra, process models and estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TfError {
    #[error("grid length {0} is invalid: must be even and at least 4")]
    InvalidLength(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("alpha {0} outside [-1/2, 1/2]")]
    AlphaOutOfRange(f64),

    #[error("{name} = {value} exceeds grid (limit {limit})")]
    ExceedsGrid {
        name: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("correlation operator is not positive semidefinite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("operator is not Hermitian")]
    NotHermitian,

    #[error("sampling grid violates {bound}: {detail}")]
    SamplingBound { bound: &'static str, detail: String },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, TfError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> TfError {
    TfError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
