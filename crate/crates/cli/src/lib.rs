//! Experiment runner behind the `rnnid` binary.
//!
//! Every command reads one JSON [`ExperimentConfig`], writes CSV data and
//! JSON reports under an output directory, and renders SVG plots from the
//! CSV files it has just written.

pub mod commands;
pub mod config;
pub mod curves;
pub mod plot;

pub use commands::{cmd_analyze, cmd_compare, cmd_run};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<rnnid::Error> for CliError {
    fn from(e: rnnid::Error) -> Self {
        CliError::Runtime(e.to_string())
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
