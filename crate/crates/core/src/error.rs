use std::path::PathBuf;
use thiserror::Error;

/// Unified error type for the engine.
///
/// The variants map onto the CLI exit codes: `Config` exits 2, `Domain`,
/// `State`, `Data` and `Io` exit 3, `Numeric` exits 4.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called in a state that does not allow it.
    #[error("state error: {0}")]
    State(String),

    /// Malformed or inconsistent input data (CSV rows, unknown ids, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration key or value.
    #[error("config error: {0}")]
    Config(String),

    /// A non-finite value surfaced where the computation requires finite ones.
    #[error("numeric failure: {0}")]
    Numeric(String),

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
}

pub type Result<T> = std::result::Result<T, Error>;
