//! Configuration loading and experiment runners behind the `fairsched`
//! binary.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{
    run_distributed, run_simulate, run_solve, validate, DistributedOutcome, SimulateOutcome,
    SolveOutcome,
};
pub use config::{load_config, parse_config, DistributedSection, RunConfig, SimulationConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] fairsched::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(fairsched::Error::Config(_)) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}
