use std::path::Path;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("numerical error: {0}")]
    Numerical(#[from] csl_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) | CliError::Io { .. } => exit::CONFIG,
            CliError::Check(_) => exit::CHECK,
            CliError::Numerical(_) => exit::NUMERICAL,
        })
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub mod exit {
    pub const PASS: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const CHECK: u8 = 3;
    pub const NUMERICAL: u8 = 4;
}
