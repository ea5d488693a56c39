//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: unknown flags, malformed configs, missing inputs.
    /// The CLI maps these to exit code 2.
    #[error("{0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {msg}")]
    Csv { path: PathBuf, msg: String },

    #[error("json error at {path}: {msg}")]
    Json { path: PathBuf, msg: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("video error at {path}: {msg}")]
    Video { path: PathBuf, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True when the failure comes from user-provided configuration or
    /// missing inputs rather than a runtime fault.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
