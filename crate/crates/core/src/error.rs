use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. The CLI maps the category of each variant
/// onto its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("empty support: all entries are -inf")]
    EmptySupport,

    #[error("state explosion: {count} states per data point exceeds cap {cap}")]
    StateExplosion { count: u128, cap: usize },

    #[error("worker failed on shard {shard}: {source}")]
    Worker {
        shard: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::StateExplosion { .. } => ErrorClass::Config,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => ErrorClass::Data,
            Error::Numerical(_) | Error::EmptySupport => ErrorClass::Numerical,
            Error::Worker { source, .. } => source.class(),
        }
    }
}
