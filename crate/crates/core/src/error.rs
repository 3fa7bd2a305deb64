use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The evaluation point sits on a singularity of the operator or target.
    #[error("singularity at evaluation point: {0}")]
    Singularity(String),

    #[error("kernel fails the mean-value-zero condition (defect {defect:.3e})")]
    NotMeanZero { defect: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("principal value did not converge after {iterations} halvings")]
    NoConvergence { iterations: usize },
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
