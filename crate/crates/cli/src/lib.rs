//! Library side of the `koopmon` binary: config file schema, sweep
//! execution and result emission. The binary in `main.rs` is a thin
//! dispatcher over these.

pub mod config;
pub mod output;
pub mod sweep;

use std::fmt;

/// CLI failure classes; they map onto process exit codes (config errors
/// exit 1, runtime errors exit 2).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<koopmon::Error> for CliError {
    fn from(e: koopmon::Error) -> Self {
        use koopmon::Error::*;
        match &e {
            InvalidConfig(_) | DimensionMismatch { .. } | NonFiniteInput { .. } | Checkpoint(_) => {
                CliError::Config(e.to_string())
            }
            Phase { source, .. } => match source.as_ref() {
                InvalidConfig(_) => CliError::Config(e.to_string()),
                _ => CliError::Runtime(e.to_string()),
            },
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
