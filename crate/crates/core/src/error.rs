use std::path::PathBuf;

use thiserror::Error;

use crate::learner::LinearModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed rows in {} at lines {lines:?}", .path.display())]
    MalformedRows { path: PathBuf, lines: Vec<usize> },

    #[error("solver did not converge (duality gap {gap:e})")]
    NonConvergence { best: Box<LinearModel>, gap: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("attack made no progress: {0}")]
    NoProgress(String),

    #[error("corrupted store: {0}")]
    CorruptStore(String),

    #[error("untestable: {0}")]
    Untestable(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
