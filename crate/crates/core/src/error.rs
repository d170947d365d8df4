use std::path::PathBuf;

use crate::frontend::{LexError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Lex(#[from] LexError),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{path}: {source}")]
    Source {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("model format error at byte {offset}: {message}")]
    ModelFormat { offset: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),

    #[error("mutation quota unreachable in split {split}: wanted {wanted}, mutated {achieved} (short by {})", wanted - achieved)]
    QuotaShortfall {
        split: String,
        wanted: usize,
        achieved: usize,
    },

    #[error("generator produced an unparsable file: {0}")]
    Generator(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the offending file to a frontend error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::Source {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// True for lex and parse failures, possibly wrapped with a path.
    pub fn is_frontend(&self) -> bool {
        match self {
            Error::Lex(_) | Error::Parse(_) => true,
            Error::Source { source, .. } => source.is_frontend(),
            _ => false,
        }
    }
}
