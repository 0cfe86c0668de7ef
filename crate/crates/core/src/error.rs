use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("invariant violated on field `{field}`: {message}")]
    Invariant { field: String, message: String },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("coverage calibration failed: {0}")]
    Calibration(String),

    #[error("dataset has a single class: {0}")]
    SingleClass(String),

    #[error("feature schema mismatch: expected {expected}, got {actual}")]
    SchemaMismatch { expected: String, actual: String },

    #[error("unsupported model document: {0}")]
    ModelFormat(String),

    #[error("unknown volume threshold {0} bytes")]
    UnknownThreshold(u64),

    #[error("missing predictor for strategy {0}")]
    MissingPredictor(&'static str),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

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

    pub(crate) fn invariant(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
