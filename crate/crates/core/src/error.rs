use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The Gram matrix of the input observations lost rank at `dimension`
    /// (a sender index). Usually means a sender never appears in the trace,
    /// or fewer rounds than senders were observed.
    #[error("singular system: Gram matrix is rank deficient at sender dimension {dimension} (of {size})")]
    SingularSystem { dimension: usize, size: usize },

    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),

    #[error("invalid scenario at round {round}: {reason}")]
    InvalidScenario { round: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("frequency of user {index} is zero; input autocorrelation is singular")]
    SingularFrequency { index: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("event log is empty")]
    EmptyLog,

    #[error("trace is empty: {0}")]
    EmptyTrace(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
