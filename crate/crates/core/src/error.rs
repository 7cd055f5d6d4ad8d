use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Correlation or PAPR of a signal with no energy.
    #[error("undefined for a zero-energy signal: {0}")]
    ZeroEnergy(String),

    #[error("batch-norm running statistics have not been initialised")]
    UninitializedStatistics,

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss; carries the last epoch that finished cleanly.
    #[error("training diverged at epoch {epoch} (last good epoch: {last_good:?}): {detail}")]
    Diverged {
        epoch: usize,
        last_good: Option<usize>,
        detail: String,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::InvalidParameter(_) | Error::Config(_) => 1,
            Error::Format(_) | Error::Io { .. } | Error::ZeroEnergy(_) => 2,
            Error::UninitializedStatistics | Error::Numeric(_) | Error::Diverged { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
