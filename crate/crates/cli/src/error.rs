use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Integrity(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Integrity(_) => 3,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl From<mededge::Error> for CliError {
    fn from(e: mededge::Error) -> Self {
        match e {
            mededge::Error::Integrity(_) => CliError::Integrity(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<mededge_service::ServiceError> for CliError {
    fn from(e: mededge_service::ServiceError) -> Self {
        match e {
            mededge_service::ServiceError::Core(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}
