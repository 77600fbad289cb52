use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("encoding needs at least one source document")]
    NoDocuments,
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("target sequence must end with EOS")]
    MissingEos,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("checkpoint format: {0}")]
    Format(String),
}

impl ModelError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
