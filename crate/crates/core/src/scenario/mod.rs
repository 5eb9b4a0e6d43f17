//! Scenario files describe a whole experiment in one TOML document. The
//! runner turns a finished run into a report bundle.

mod config;
mod expect;
mod pipeline;
mod report;

pub use config::{
    IdsSection, MonitorSection, Overrides, Scenario, ScenarioConfig, ScriptAction, ScriptStep,
    StrategySelect, Value, SCENARIO_FORMAT_VERSION,
};
pub use expect::{Expectation, ExpectationResult, Mode, Window};
pub use pipeline::{calibrate_quantised, split_windows, train_on_windows, train_pipeline, CALIBRATION_QUANTILES, PipelineOutcome, ACTIVATION_BITS, DEFAULT_TRAIN_FRACTION};
pub use report::{corpus_windows, ReportBundle, ScenarioRun, Summary, DEFAULT_CAPTURE_MS};

use std::path::PathBuf;

use thiserror::Error;

use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("script step {step}: {message}")]
    Script { step: usize, message: String },
    #[error(transparent)]
    Sim(SimError),
}

impl From<SimError> for ScenarioError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Script { step, message } => ScenarioError::Script { step, message },
            other => ScenarioError::Sim(other),
        }
    }
}
