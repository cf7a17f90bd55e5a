use std::path::PathBuf;

/// Errors produced by the toolkit.
///
/// Variants are grouped by what the caller did wrong (configuration, domain,
/// shape) versus what went wrong at runtime (I/O, integrity, optimisation).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("injection error at layer {layer}: {reason}")]
    Injection { layer: usize, reason: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("knitting error between spans {left_span} and {right_span}: max abs diff {max_diff:e} over {mismatched} values")]
    Knitting {
        left_span: usize,
        right_span: usize,
        max_diff: f64,
        mismatched: usize,
    },

    #[error("non-finite loss at step {step}")]
    NonFinite {
        step: usize,
        trace: Vec<crate::inversion::LossRecord>,
    },

    #[error("finetuning diverged at step {step}")]
    Diverged { step: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid caller input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Domain(_)
                | Error::Shape(_)
                | Error::Injection { .. }
                | Error::Range(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
