use thiserror::Error;

/// Errors raised across the crate.
///
/// Each variant maps onto one CLI exit code, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("resource error: {0}")]
    Resource(String),

    #[error("numerical degeneracy: {0}")]
    Degeneracy(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("too few usable data points: {0}")]
    DataSparsity(String),

    #[error("unsupported rank: {0}")]
    UnsupportedRank(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Degeneracy(_) | Error::UnsupportedRank(_) => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
