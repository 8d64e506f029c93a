use thiserror::Error;

/// CLI-level errors mapped to process exit codes:
/// usage/config -> 1, data -> 2, numeric failure -> 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<cdo_core::Error> for CliError {
    fn from(e: cdo_core::Error) -> Self {
        use cdo_core::Error as E;
        match e {
            E::SingularSystem
            | E::Backend(_)
            | E::NoPositiveWeights
            | E::NonPositiveMass
            | E::NotSymmetric(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
