use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A data cell needed by an estimator has no observations.
    #[error("estimation error: empty cell {cell}")]
    EmptyCell { cell: String },

    /// Any other estimation failure (for example an empty treatment arm).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The simulation configuration cannot be used.
    #[error("configuration error: {0}")]
    Config(String),

    /// A dataset file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::EmptyCell { .. } => "empty_cell",
            Error::Estimation(_) => "estimation",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }

    /// True for failures caused by sparse data rather than bad input.
    pub fn is_sparse_data(&self) -> bool {
        matches!(self, Error::EmptyCell { .. } | Error::Estimation(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
