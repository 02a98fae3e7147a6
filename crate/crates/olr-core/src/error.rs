use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum OlrError {
    /// Tensor or layer shape mismatch. The message names the operation and
    /// the offending dimension.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration or argument value.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents (checkpoint, PPM, CSV, JSON). Messages for
    /// binary formats include the byte offset of the failure.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A pipeline stage needs an artifact another stage has not produced.
    #[error("missing artifact: {0} (run the producing stage first)")]
    MissingArtifact(PathBuf),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("numerical error: {0}")]
    Math(String),
}

pub type Result<T> = std::result::Result<T, OlrError>;

impl OlrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OlrError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        OlrError::Format { path: path.into(), message: message.into() }
    }
}
