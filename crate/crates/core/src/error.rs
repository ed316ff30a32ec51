use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} out of bounds: {value} (allowed {min}..={max})")]
    Bounds {
        field: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("unanchored stream at line {line}: temporal cue before any reign was established")]
    UnanchoredStream { line: usize },

    #[error("unknown gong {name:?} at line {line}")]
    UnknownGong { name: String, line: usize },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("numerical failure: {0}")]
    NonFinite(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
