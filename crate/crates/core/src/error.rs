use std::path::PathBuf;

use thiserror::Error;

/// Every failure the workbench can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fixed-point format: {0}")]
    Format(String),

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("training diverged: {0}")]
    Training(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used for CLI exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Overflow(_) => "overflow",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::Shape { .. } => "shape",
            Error::Training(_) => "training",
            Error::ModelFile(_) => "model-file",
            Error::Dataset(_) => "dataset",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
