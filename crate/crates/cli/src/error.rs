use std::fmt;
use std::process::ExitCode;

use tfspec_core::TfError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl From<TfError> for CliError {
    fn from(e: TfError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
