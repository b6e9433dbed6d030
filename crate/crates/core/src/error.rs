use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate returns this error.
///
/// The variant is the error category; the CLI prints it as a prefix so
/// scripted callers can tell a bad input file from a numeric blow-up.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("format error in {field}: {message}")]
    Format {
        field: &'static str,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest {path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

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

    /// Short category name, used for CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Singularity(_) => "singularity",
            Error::Format { .. } => "format",
            Error::Validation(_) => "validation",
            Error::Lookup(_) => "lookup",
            Error::State(_) => "state",
            Error::Config(_) => "config",
            Error::Manifest { .. } => "manifest",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::Shape(format!(
        "{what}: expected {}x{}, got {}x{}",
        expected.0, expected.1, got.0, got.1
    ))
}
