use std::fmt;

/// Failure of a command, split by exit code: 1 for configuration
/// problems, 2 for missing or unusable data.
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Data(anyhow::Error),
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::Data(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e:#}"),
            CliError::Data(e) => write!(f, "data error: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<su2_kms::Error> for CliError {
    fn from(e: su2_kms::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Converts any library error into a data error.
pub trait DataContext<T> {
    fn data(self) -> CliResult<T>;
}

impl<T, E: Into<su2_kms::Error>> DataContext<T> for Result<T, E> {
    fn data(self) -> CliResult<T> {
        self.map_err(|e| CliError::from(e.into()))
    }
}
