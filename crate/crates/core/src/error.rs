use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the reservoir-management pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("field generation failed: {0}")]
    Generation(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("simulation failed at t = {time:.3} d: {message}")]
    Simulation { time: f64, message: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("training aborted: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
