use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Config { path: String, line: usize, column: usize, message: String },
    #[error("{0}")]
    Core(#[from] wassdiff_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid plot: {0}")]
    Plot(String),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn config(path: &Path, message: impl Into<String>) -> Self {
        Self::Config { path: path.display().to_string(), line: 0, column: 0, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
