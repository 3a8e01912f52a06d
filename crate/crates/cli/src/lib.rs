//! Command-line plumbing around `fraudctl-core`: config files, the
//! `simulate`, `oracle-check`, `tune-lambda` and `report` commands, and the
//! files they write.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;

/// Failures surfaced as process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or unreadable configuration: exit 2.
    #[error("config error: {0}")]
    Config(String),
    /// Anything that went wrong while running: exit 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<fraudctl_core::Error> for CliError {
    fn from(e: fraudctl_core::Error) -> Self {
        match e {
            fraudctl_core::Error::Config(_) | fraudctl_core::Error::BatchTooLarge { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
