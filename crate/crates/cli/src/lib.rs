//! Experiment runner for `deep_hankel`.
//!
//! Each subcommand resolves an [`ExperimentConfig`] (defaults, then a flat
//! `key = value` file, then flags), runs the experiment, and writes plot-ready
//! CSV files plus a snapshot of the resolved config into the output directory.

pub mod commands;
pub mod config;
pub mod table;

use thiserror::Error;

pub use commands::{run, Artifacts};
pub use config::{Experiment, ExperimentConfig, PlantSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("excitation failure: {0}")]
    Excitation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Excitation(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<deep_hankel::Error> for CliError {
    fn from(e: deep_hankel::Error) -> Self {
        use deep_hankel::Error as E;
        match e {
            E::Expressivity { .. } | E::NotExciting { .. } => CliError::Excitation(e.to_string()),
            E::DareDivergence { .. } | E::Singular(_) | E::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
