use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("division hazard: pixel (row {row}, col {col}) has zero intensity and epsilon is 0")]
    DivisionHazard { row: usize, col: usize },

    #[error("zero-variance bands: {0:?}")]
    ZeroVariance(Vec<usize>),

    #[error("dense operator too large: {rows}x{cols} exceeds cap {cap} per side")]
    TooLarge {
        rows: usize,
        cols: usize,
        cap: usize,
    },

    #[error("solver diverged at stage {stage}: residual {residual:e} > 1e3 x initial {initial:e}")]
    Divergence {
        stage: usize,
        residual: f64,
        initial: f64,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
