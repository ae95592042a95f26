//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty input: no interactions found")]
    EmptyInput,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(
        "cannot sample {requested} negatives for user {user}: only {available} uninteracted items"
    )]
    CannotSample {
        user: u32,
        requested: usize,
        available: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("training diverged: non-finite embedding at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("no evaluable users in split")]
    NoEvaluableUsers,

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
