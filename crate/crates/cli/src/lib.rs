//! Command-line driver for rotation-invariant coordinate CNN experiments:
//! offset export, training, rotated evaluation, equivariance curves,
//! throughput and checkpoints.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod config;

pub use args::{Cli, Command};
pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Precision};

/// Exit code for runtime failures (non-finite loss, I/O mid-run).
pub const EXIT_RUNTIME: u8 = 1;
/// Exit code for usage and validation errors.
pub const EXIT_USAGE: u8 = 2;

/// A command error tagged with the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0:#}")]
    Usage(anyhow::Error),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

/// Tags an error as a usage or a runtime failure.
pub trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub fn usage_error(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::Error::msg(msg.into()))
}
