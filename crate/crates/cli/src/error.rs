//! CLI error classification and exit codes: 0 success, 2 configuration,
//! 3 numerical failure, 4 I/O.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<iontrap_core::Error> for CliError {
    fn from(e: iontrap_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
