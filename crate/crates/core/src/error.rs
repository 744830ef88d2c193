use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("a training cycle is already running for task {0}")]
    Busy(String),

    #[error("ingest failed at row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("snapshot version mismatch: expected {expected}, found {found:?}")]
    Version { expected: &'static str, found: String },

    #[error("dimension mismatch: model has {expected}, vector has {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("cannot cluster {points} points into {k} clusters; shrink k")]
    TooFewPoints { points: usize, k: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(#[from] toml::de::Error),
}

impl Error {
    pub fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            id: id.into(),
        }
    }
}
