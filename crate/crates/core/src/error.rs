use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is outside its valid range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data is malformed or violates a model invariant.
    #[error("invalid data: {0}")]
    Data(String),

    /// Two artifacts (samples, counts, network) disagree with each other.
    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }

    /// Process exit code used by the command-line tool and the C API.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Mismatch(_) => 4,
        }
    }
}
