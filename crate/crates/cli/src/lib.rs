//! Experiment driver for `critbatch-core`: `run`, `sweep` and `compare`
//! commands writing CSV traces and JSON summaries.

pub mod commands;
pub mod config;

pub use commands::{cmd_compare, cmd_run, cmd_sweep, prepare, Prepared};
pub use config::{ExperimentConfig, Overrides};

use critbatch_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run diverged ({label}, seed {seed}, step {step}): {reason}")]
    Diverged {
        label: String,
        seed: u64,
        step: usize,
        reason: String,
    },
    #[error("precision unreachable: {0}")]
    Unreachable(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(Error),
}

impl CliError {
    /// 0 success, 2 config error, 3 divergence, 4 precision unreachable,
    /// 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::Unreachable(_) => 4,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. }
            | Error::MissingParameter { .. }
            | Error::StepSizeTooLarge { .. }
            | Error::DimensionMismatch { .. }
            | Error::Domain(_) => CliError::Config(e.to_string()),
            Error::PrecisionUnreachable { .. } => CliError::Unreachable(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
