use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    /// Missing or inconsistent input files.
    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] deepadc::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => e.exit_code() as u8,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
