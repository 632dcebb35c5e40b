use std::fmt;

use lauerl::LaueError;

/// Process exit status classes.
#[derive(Debug)]
pub enum CliError {
    /// Bad or unreadable run configuration; exit code 2.
    Config(String),
    /// Unreadable or ill-formed input data; exit code 3.
    Data(String),
    /// Anything else; exit code 1.
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<LaueError> for CliError {
    fn from(e: LaueError) -> Self {
        let m = e.to_string();
        match e {
            LaueError::Config(_)
            | LaueError::IncompatibleTargetMode { .. }
            | LaueError::UnsupportedSpaceGroup(_)
            | LaueError::InvalidLattice(_)
            | LaueError::DegenerateCell(_)
            | LaueError::InvalidBand(..) => CliError::Config(m),
            LaueError::Format { .. }
            | LaueError::Checkpoint(_)
            | LaueError::Shape { .. }
            | LaueError::MissingClass(_)
            | LaueError::NoLines
            | LaueError::Io(_) => CliError::Data(m),
            _ => CliError::Other(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
