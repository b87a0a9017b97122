use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("capacity: {0}")]
    Capacity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {token} out of vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {id} at lines {first_line} and {second_line}")]
    DuplicateId {
        id: u64,
        first_line: usize,
        second_line: usize,
    },

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("non-finite gradient in example {example_id} ({term})")]
    NonFinite { example_id: u64, term: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Capacity(_) => "capacity",
            Error::Config(_) => "config",
            Error::TokenOutOfRange { .. } => "domain",
            Error::Shape(_) => "shape",
            Error::Parse { .. } => "parse",
            Error::DuplicateId { .. } => "conflict",
            Error::Version { .. } => "version",
            Error::Corrupt(_) => "corrupt",
            Error::NonFinite { .. } => "non_finite",
            Error::Io { .. } => "io",
        }
    }
}
