use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed or invalid row in an input table. `row` is the 1-based data
    /// row number (the header is row 0).
    #[error("{file}, row {row}: {message}")]
    Row { file: String, row: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no path from node {origin} to node {destination}")]
    NoPath { origin: String, destination: String },

    #[error("singular fit: {0}")]
    SingularFit(String),

    /// A broken internal invariant (conservation, budgets, path corruption).
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn row(file: impl Into<String>, row: usize, message: impl Into<String>) -> Self {
        Error::Row {
            file: file.into(),
            row,
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end: 1 input validation,
    /// 2 runtime assertion, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Invariant(_) => 2,
            Error::Row { .. } | Error::Invalid(_) | Error::Config(_) | Error::NoPath { .. } | Error::SingularFit(_) => {
                1
            }
        }
    }
}
