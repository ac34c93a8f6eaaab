use std::path::PathBuf;

/// Errors raised anywhere in the multiscale pipeline.
///
/// Every variant carries enough context to attribute the failure to the stage
/// that produced it; [`Error::category`] maps variants onto CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("[{module}] singular or indefinite system: {detail}")]
    Singular { module: &'static str, detail: String },

    #[error("[{module}] residual {residual:.3e} exceeds tolerance {tolerance:.1e}: {detail}")]
    Tolerance {
        module: &'static str,
        residual: f64,
        tolerance: f64,
        detail: String,
    },

    #[error("[{module}] internal error: {detail}")]
    Internal { module: &'static str, detail: String },
}

/// Coarse failure classes, used for process exit codes and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    InvalidInput,
    Io,
    Numerical,
    Internal,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::Parse { .. } => ErrorCategory::InvalidInput,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Singular { .. } | Error::Tolerance { .. } => ErrorCategory::Numerical,
            Error::Internal { .. } => ErrorCategory::Internal,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            })
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
