//! Config-driven runs: dataset generation, training, evaluation, recovery
//! export and the noising-space comparison. The `specdiff` binary is a thin
//! argument parser over [`commands`].

pub mod commands;
pub mod config;

pub use config::{Overrides, RunConfig};

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl From<specdiff::Error> for CliError {
    fn from(e: specdiff::Error) -> Self {
        use specdiff::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Pattern(_) | E::Mismatch(_) | E::Empty(_) | E::Untrained | E::Shape(_) => {
                Self::Config(msg)
            }
            E::Io(_) | E::Json(_) | E::Format(_) => Self::Io(msg),
            E::NonFinite(_)
            | E::NoConvergence { .. }
            | E::TimeOutOfRange(_)
            | E::DegenerateKernel(_)
            | E::InvalidStep(_)
            | E::NoForward
            | E::NonFiniteLoss { .. } => Self::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
