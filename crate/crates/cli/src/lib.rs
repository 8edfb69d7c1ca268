//! Experiment driver behind the `spde` binary: configuration files, the
//! `run`, `convergence` and `figure` commands, and their artifacts.

pub mod commands;
pub mod config;

use std::fmt;

pub use config::{CorrectorKind, ExperimentConfig, CONFIG_KEYS};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    Config(String),
    /// Solver or numeric failure; exit code 3.
    Solver(String),
    /// Filesystem trouble; exit code 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<spde_core::Error> for CliError {
    fn from(e: spde_core::Error) -> Self {
        use spde_core::Error as E;
        match e {
            E::InvalidArgument(_) => CliError::Config(e.to_string()),
            E::Numeric { .. } | E::Training { .. } | E::RankDeficient { .. } => CliError::Solver(e.to_string()),
            E::Io(_) | E::Serde(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
