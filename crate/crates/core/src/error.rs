use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("x = {x} is outside the mixture support")]
    OutsideSupport { x: u64 },

    #[error("truncation point {given} too small, need at least {required}")]
    TruncationTooSmall { given: u64, required: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("worst-case prior solver did not converge after {iterations} iterations (gap {gap:.3e}, tolerance {tol:.3e})")]
    NotConverged { iterations: usize, gap: f64, tol: f64 },

    #[error("estimator `{id}` failed: {reason}")]
    Estimator { id: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
