//! Library side of the `sim` binary: config parsing, the four commands and
//! the file writers they use.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

use thiserror::Error;

pub use commands::{execute, threads_from_env, Command, Invocation};
pub use config::{apply_override, parse_config, parse_config_with, sim_config_from_value};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run diverged: {0}")]
    Diverged(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 config error, 3 divergence, 4 I/O error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<scm_core::SimError> for CliError {
    fn from(e: scm_core::SimError) -> Self {
        CliError::Config(e.to_string())
    }
}
