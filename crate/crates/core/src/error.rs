use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular time: effective time {0} must be positive")]
    SingularTime(f64),

    #[error("unsupported dimension: expected d = {expected}, got d = {got}")]
    UnsupportedDimension { expected: usize, got: usize },

    #[error("infeasible corruption budget: {0}")]
    InfeasibleBudget(String),

    #[error("trajectory {replicate} diverged at step {step}")]
    Divergence { step: usize, replicate: usize },

    #[error("tolerance {tolerance:e} not met after {depth} refinements")]
    ToleranceNotMet { tolerance: f64, depth: usize },

    #[error("exact assignment limited to n <= {limit} (got {n}); subsample the batches")]
    SizeLimit { n: usize, limit: usize },

    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
