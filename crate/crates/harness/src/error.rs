use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("{path}: schema mismatch: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("{task_id}: text too short ({tokens} tokens, need more than {needed})")]
    TooShort { task_id: String, tokens: usize, needed: usize },
    #[error("no tasks: {0}")]
    EmptyTasks(String),
    #[error("unbalanced score panel, missing: {}", .0.join(", "))]
    Unbalanced(Vec<String>),
    #[error(transparent)]
    Core(#[from] poisson_eb::Error),
    #[error(transparent)]
    Model(#[from] tinyformer::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
