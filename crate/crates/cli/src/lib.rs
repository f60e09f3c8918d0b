//! Experiment harness: configuration files, synthetic datasets, presets,
//! and the generate/train/evaluate/sweep pipeline behind the `mcvae`
//! binary.

pub mod config;
pub mod dataset;
pub mod modelio;
pub mod presets;
pub mod runner;

use thiserror::Error;

/// Harness-level errors, mapped onto process exit codes: configuration
/// problems exit 1, runtime failures exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl From<mcvae::Error> for CliError {
    fn from(e: mcvae::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
