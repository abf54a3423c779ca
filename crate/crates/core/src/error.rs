use std::path::PathBuf;

/// Errors produced anywhere in the fusion pipeline.
#[derive(Debug, thiserror::Error)]
pub enum FuseError {
    /// A math routine received an input outside its domain (e.g. a NaN).
    #[error("domain error: {0}")]
    Domain(String),

    /// A distribution or head parameter violates its invariant.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Vector or matrix dimensions disagree.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    /// Input data is semantically invalid (duplicate ids, non-finite values...).
    #[error("data error: {0}")]
    Data(String),

    /// A file could not be parsed.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    /// A model file was written by an incompatible format version.
    #[error("incompatible model file: expected `{expected}`, found `{found}`")]
    Incompatible { expected: String, found: String },

    /// The objective evaluated to a non-finite value.
    #[error("non-finite loss at image {image}, metric {metric}")]
    NonFinite { image: usize, metric: usize },

    /// A configuration value is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FuseError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FuseError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        FuseError::Format {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FuseError>;
