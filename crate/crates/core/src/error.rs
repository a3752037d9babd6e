use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QusError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numeric failure in {layer}: {message}")]
    NumericFailure { layer: String, message: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("data leakage: {0}")]
    DataLeakage(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = QusError> = std::result::Result<T, E>;

impl QusError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        QusError::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        QusError::DegenerateStatistic(msg.into())
    }

    pub(crate) fn numeric(layer: impl Into<String>, message: impl Into<String>) -> Self {
        QusError::NumericFailure {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QusError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        QusError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            QusError::Usage(_) => 1,
            QusError::NumericFailure { .. } | QusError::TrainingFailure(_) => 3,
            _ => 2,
        }
    }
}
