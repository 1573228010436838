use std::path::PathBuf;

use thiserror::Error;

/// Failure categories surfaced by the pipeline.
///
/// The CLI maps these onto process exit codes, so the variants are grouped
/// by who is at fault: configuration, input data, or numerics.
#[derive(Debug, Error)]
pub enum HopgenError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl HopgenError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        HopgenError::Parse { line, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HopgenError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error originates from user-supplied data rather than
    /// configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            HopgenError::Parse { .. } | HopgenError::Alignment(_) | HopgenError::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, HopgenError>;
