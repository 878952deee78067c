use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in an input file could not be decoded.
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },

    /// A clip violated one of the data-model rules.
    #[error("clip {clip_id}: {rule}")]
    InvalidClip { clip_id: String, rule: String },

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid pattern {name}: {reason}")]
    Pattern { name: String, reason: String },

    /// Training produced a NaN or infinite loss term.
    #[error("non-finite loss in term `{term}` (era {era}, epoch {epoch})")]
    NonFinite { term: String, era: usize, epoch: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn clip(clip_id: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::InvalidClip {
            clip_id: clip_id.into(),
            rule: rule.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
