use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum NgmError {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("graph mode error: {0}")]
    GraphMode(String),

    #[error("directed cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in `{term}`")]
    NonFinite { term: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("data error at line {line}, column `{column}`: {message}")]
    Cell {
        line: usize,
        column: String,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, NgmError>;

impl NgmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NgmError::Io {
            path: path.into(),
            source,
        }
    }
}
