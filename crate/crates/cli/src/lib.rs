//! Command implementations behind the `affgrasp` binary.

pub mod commands;
pub mod config;
pub mod ply;
pub mod report;

use affgrasp_core::Error;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("no grasp candidate: {0}")]
    NoCandidate(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(Error::InvalidInput(_) | Error::InvalidTask { .. }) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Core(Error::Divergence { .. } | Error::NonFinite(_)) => 4,
            CliError::NoCandidate(_) | CliError::Core(Error::NoCandidate { .. }) => 5,
            CliError::Core(_) => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::MissingArtifact("x".into()).exit_code(), 3);
        assert_eq!(CliError::Core(Error::Divergence { step: 1, loss: f64::NAN }).exit_code(), 4);
        assert_eq!(CliError::Core(Error::NoCandidate { generated: 3, threshold: 0.5 }).exit_code(), 5);
        assert_eq!(CliError::NoCandidate("x".into()).exit_code(), 5);
    }
}
