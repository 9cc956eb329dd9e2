use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every stage of the pipeline.
///
/// [`Error::category`] gives the stable short tag printed by the CLI as
/// `ERROR: <category>: <detail>`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Format(String),

    #[error("{0}")]
    Corruption(String),

    #[error("{0}")]
    Shape(String),

    #[error("{0}")]
    Training(String),

    #[error("loss diverged (non-finite) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("{0}")]
    Range(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    /// Wraps an inner error with the context it happened in (generation,
    /// repeat index, ...). The category is inherited from the inner error.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Shape(_) => "shape",
            Error::Training(_) | Error::Divergence { .. } => "training",
            Error::Range(_) => "range",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Context { source, .. } => source.category(),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
