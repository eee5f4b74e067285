//! Experiment plumbing: traces, synthetic cohorts, calibration runs,
//! simulation and reports.

mod config;
mod report;
mod run;
mod simulate;
mod synth;
mod trace;

pub use config::{ConfigError, ExperimentConfig, PeriodRange};
pub use report::{report, AgentMetric, RankTable, ReportBundle, WinRate};
pub use run::{run_calibration, CalibrationRun, LogRecord, PersonaStore, PersonaVersion, RunLog};
pub use simulate::{
    read_flows, simulate_closed_loop, simulate_controlled, write_flows, Method, ModelSet, RunMeta, SavedRun, SimulationMode,
    SimulationResult,
};
pub use synth::{
    generate_synthetic_cohort, Archetype, Behavior, RegimeSwitch, SynthError, SyntheticCohortSpec, SyntheticTraveler,
};
pub use trace::{load_trace, read_trace, write_rows, HumanTrace, ShareRow, TimeMismatch, TraceError, TraceRow, TIME_TOLERANCE};

use std::path::Path;

use thiserror::Error;

use crate::agent::{AgentError, MemoryError};
use crate::calibrate::CalibrateError;
use crate::env::EnvError;
use crate::gateway::GatewayError;
use crate::metrics::{evaluate, MetricError, MetricReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Invalid(String),
}

/// Metrics of a saved simulation run against the recorded trace.
pub fn evaluate_run(dir: &Path, truth: &HumanTrace) -> Result<MetricReport, HarnessError> {
    let run = SavedRun::load(dir)?;
    let rows = run.rows(truth)?;
    let real = truth.flows(run.meta.range.first, run.meta.range.last);
    Ok(evaluate(&run.meta.method, &rows, Some((&run.flows, &real)))?)
}
