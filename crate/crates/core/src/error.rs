use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum NotmadError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch}: non-finite {term}")]
    TrainingDiverged { epoch: usize, term: String },

    #[error("bootstrap resample {index} failed: {source}")]
    Resample {
        index: usize,
        #[source]
        source: Box<NotmadError>,
    },

    #[error("parse error in {path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl NotmadError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NotmadError::InvalidInput(msg.into())
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            NotmadError::InvalidInput(_) => "invalid_input",
            NotmadError::TrainingDiverged { .. } => "training_diverged",
            NotmadError::Resample { .. } => "resample_failed",
            NotmadError::Parse { .. } => "parse",
            NotmadError::Format { .. } => "format",
            NotmadError::Io { .. } => "io",
            NotmadError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, NotmadError>;
