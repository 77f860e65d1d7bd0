use std::io;

use thiserror::Error;

/// Errors produced by the embedding workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    /// A text input could not be parsed. Line numbers are 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A binary file has the wrong magic, version or is truncated.
    #[error("format error: {0}")]
    Format(String),

    /// A required external input (stop-word list, config file) is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data violates a precondition of an algorithm.
    #[error("data error: {0}")]
    Data(String),

    /// A gold tag is missing from the model's tag inventory.
    #[error("tag `{tag}` is not in the {inventory} inventory")]
    Inventory { inventory: &'static str, tag: String },

    #[error("`{0}` is not in the vocabulary")]
    NotInVocabulary(String),

    #[error("similarity is undefined for a zero vector")]
    ZeroVector,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
