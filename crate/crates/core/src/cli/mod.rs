//! Command-line front end: scenario loading, runs, replays, latency
//! profiling, reports and the artifact archive.

mod archive;
mod commands;
mod report;
mod scenario;

use thiserror::Error;

pub use archive::{cmd_archive, read_pgm, write_pgm, DirArchiver};
pub use commands::{cmd_compare, cmd_profile, cmd_replay, cmd_run, read_runlog, RunArtifacts, RunFlags};
pub use report::{
    canonical_json, csv, csv_row, evaluate, full_precision_json, AnomalyEntry, EvalReport, NavReport, CSV_HEADER,
    REPORT_VERSION,
};
pub use scenario::{load_scenario, parse_scenario, BackendChoice, LoadedScenario, Overrides, SCENARIO_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("run log schema error: {0}")]
    LogSchema(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) | Self::LogSchema(_) => 2,
            Self::Io(_) | Self::Runtime(_) => 3,
        }
    }
}
