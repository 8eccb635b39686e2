use std::io;
use std::path::PathBuf;

use serde::Serialize;
use tal_core::TalError;

/// Exit codes. Kept in sync with the table in `--help`.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_LIBRARY: u8 = 4;
pub const EXIT_IO: u8 = 5;
pub const EXIT_VERIFICATION: u8 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Library(#[from] TalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Verification(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn config(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Config { path: path.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Library(_) => EXIT_LIBRARY,
            CliError::Io { .. } => EXIT_IO,
            CliError::Verification(_) => EXIT_VERIFICATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config { .. } => "config",
            CliError::Library(_) => "library",
            CliError::Io { .. } => "io",
            CliError::Verification(_) => "verification",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            code: u8,
            message: String,
        }
        serde_json::to_string(&Record { error: self.kind(), code: self.exit_code(), message: self.to_string() })
            .expect("error record serializes")
    }
}
