use thiserror::Error;

/// Failure modes shared by every module of the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The requested privacy level cannot be met by any finite value.
    #[error("unsatisfiable: {0}")]
    Unsatisfiable(String),

    #[error("bucket count {buckets} exceeds cap {cap}; use a coarser grid spacing")]
    CapacityExceeded { buckets: usize, cap: usize },

    #[error("calibration bracket exhausted: no noise multiplier up to {max_sigma} reaches delta {delta} at epsilon {epsilon}")]
    BracketExhausted { max_sigma: f64, epsilon: f64, delta: f64 },

    #[error("enumeration of {count} multisets exceeds cap {cap}; use quadrature instead")]
    TooLarge { count: u128, cap: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
