use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    /// Malformed or inconsistent input data (labels, dimensions, point universes).
    #[error("data error: {0}")]
    Data(String),

    /// RANSAC or least-squares fitting produced no usable model.
    #[error("fit failed: {0}")]
    Fit(String),

    #[error("trunk extraction failed: {0}")]
    Trunk(String),

    #[error("missing model for stage {0}")]
    MissingModel(&'static str),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
