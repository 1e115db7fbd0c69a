use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid training schedule: {0}")]
    InvalidSchedule(String),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite gradient in `{path}`")]
    NonFiniteGradient { path: String },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64, log: Vec<crate::train::EpochLog> },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] poisson_eb::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
