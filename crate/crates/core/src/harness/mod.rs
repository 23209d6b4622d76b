//! Experiment plumbing: TOML configs, run directories, seed fan-out, sweeps,
//! statistics and reports.

use std::path::PathBuf;

pub mod config;
pub mod report;
pub mod run;
pub mod stats;

pub use config::{AgentSection, AnalysisSection, EnvSection, ExperimentConfig, SweepAxis, SweepSection, SweepValue};
pub use report::{emit_report, mi_aggregates, score_table, sweep, CellKey, MiAggregate, ReportFiles, ScoreRow, ScoreTable};
pub use run::{load_model, load_run, load_runs, measure, parse_seeds, run_jobs, run_one, run_seeds, workers_from_env, RunOptions, RunRecord, WORKERS_ENV};
pub use stats::{ci95, welch_t_test, WelchResult};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("run directory {0} already exists")]
    Exists(PathBuf),
    #[error("no run records")]
    Empty,
    #[error("records are not comparable: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
    #[error(transparent)]
    Info(#[from] crate::info::InfoError),
    #[error(transparent)]
    Cmdp(#[from] crate::cmdp::CmdpError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Theory(#[from] crate::theory::TheoryError),
}
