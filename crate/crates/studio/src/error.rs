use std::path::PathBuf;

/// Errors surfaced by the service and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum StudioError {
    #[error(transparent)]
    Core(#[from] styleweave::Error),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("project hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl StudioError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StudioError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn bad(msg: impl Into<String>) -> Self {
        StudioError::BadRequest(msg.into())
    }

    /// Caller mistakes: malformed requests and invalid pipeline inputs.
    pub fn is_validation(&self) -> bool {
        match self {
            StudioError::Core(e) => e.is_validation(),
            StudioError::BadRequest(_) | StudioError::Json(_) => true,
            _ => false,
        }
    }

    /// HTTP status for this error.
    pub fn status(&self) -> u16 {
        match self {
            StudioError::NotFound(_) => 404,
            StudioError::HashMismatch { .. } => 409,
            e if e.is_validation() => 400,
            _ => 500,
        }
    }
}

pub type Result<T> = std::result::Result<T, StudioError>;
