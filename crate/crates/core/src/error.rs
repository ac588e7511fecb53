use thiserror::Error;

/// Errors raised by the estimators, samplers and data loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite ({context}): pivot {pivot:.3e} below threshold {threshold:.3e}")]
    NotPositiveDefinite {
        context: String,
        pivot: f64,
        threshold: f64,
    },

    #[error("patient {id}: {reason}")]
    Validation { id: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("estimation failed at visit {visit}: {reason}")]
    Estimation { visit: usize, reason: String },

    #[error("sampler diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("replication {index} failed (master seed {seed}): {source}")]
    Replication {
        index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("leave-one-out refit without patient {id} failed: {source}")]
    LeaveOneOut {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Coarse category used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) | Error::InvalidInput(_) | Error::Config(_) => {
                ErrorKind::Usage
            }
            Error::Validation { .. } | Error::Parse { .. } | Error::Csv(_) | Error::Io(_) => {
                ErrorKind::Data
            }
            Error::NotPositiveDefinite { .. }
            | Error::Estimation { .. }
            | Error::Divergence { .. } => ErrorKind::Numeric,
            Error::Replication { source, .. } | Error::LeaveOneOut { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

pub type Result<T> = std::result::Result<T, Error>;
