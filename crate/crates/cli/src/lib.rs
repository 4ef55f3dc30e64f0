//! Benchmark harness behind the `fpareto` binary.
//!
//! [`run`] executes a parsed invocation and returns a report plus the exit
//! code; the binary only handles I/O around it.

pub mod args;
pub mod commands;
pub mod instance;
pub mod report;

pub use args::Cli;
pub use report::{Outcome, RunRecord, RunReport};

/// Exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// Usage errors and anything not listed below.
    pub const FAILURE: i32 = 1;
    pub const INFEASIBLE_RANK: i32 = 2;
    pub const BUDGET_EXHAUSTED: i32 = 3;
    pub const IO: i32 = 4;
    pub const ORACLE_REGRESSION: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fpareto::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use fpareto::Error as E;
        match self {
            CliError::Io(_) | CliError::Json(_) | CliError::Csv(_) => exit::IO,
            CliError::Core(E::Io(_) | E::Json(_) | E::Parse { .. } | E::DuplicateIndex { .. } | E::BadFormat(_)) => exit::IO,
            _ => exit::FAILURE,
        }
    }
}

/// Runs one invocation. `argv` is echoed into the report.
pub fn run(cli: &Cli, argv: Vec<String>) -> Result<Outcome, CliError> {
    commands::dispatch(cli, argv)
}
