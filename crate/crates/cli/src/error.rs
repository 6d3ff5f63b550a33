use thiserror::Error;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// A verification check or assertion did not hold.
    #[error("{0}")]
    Check(String),
    /// Bad configuration, bad arguments, or a refused overwrite.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<hcnn::Error> for CliError {
    fn from(e: hcnn::Error) -> Self {
        match e {
            hcnn::Error::Io(_) | hcnn::Error::Format(_) => CliError::Io(e.to_string()),
            hcnn::Error::NonFinite(_) => CliError::Check(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
