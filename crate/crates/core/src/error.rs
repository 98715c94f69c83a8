use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MuseError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unresolvable image reference: {0}")]
    Unresolvable(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint schema version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("backend failure: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MuseError {
    /// Whether the error stems from bad user input (as opposed to a runtime fault).
    pub fn is_validation(&self) -> bool {
        !matches!(self, MuseError::Io(_) | MuseError::Backend(_))
    }
}

pub type Result<T, E = MuseError> = std::result::Result<T, E>;
