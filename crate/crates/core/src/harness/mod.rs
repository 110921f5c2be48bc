//! Scenario configs, the experiment runners, scope-trace ingest, JSON
//! reports and SVG plots.

mod config;
mod experiments;
mod ingest;
mod plot;
mod report;

pub use config::{
    ExperimentSettings, ScenarioConfig, ServoSettings, CONFIG_DIR_ENV, CONFIG_FORMAT, DEFAULT_CONFIG_NAME,
};
pub use experiments::{
    build_readout, fluorescence_proxy, run_analyze_experiment, run_fluorescence_experiment, run_lock_experiment,
    run_sweep_experiment, run_temp_step_experiment, target_feature, STANDARD_CROSSOVER_DEPTH, STANDARD_DOPPLER_DEPTH,
    STANDARD_HYPERFINE_DEPTH, STEP_RESPONSE_V_PER_K,
};
pub use ingest::{ingest_scope_csv, ingest_scope_text, AxisFit, Calibration, ColumnMap};
pub use plot::{emit_plot, Figure, Panel, Series};
pub use report::{Artifact, Criterion, ExperimentOutput, ExperimentReport, Measured, REPORT_SCHEMA};

use std::path::PathBuf;

use thiserror::Error;

use crate::atomic_data::AtomicDataError;
use crate::plant::PlantError;
use crate::servo::ServoError;
use crate::spectrum::SpectrumError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error (line {line}): {msg}")]
    Config { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Atomic(#[from] AtomicDataError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Servo(#[from] ServoError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("ingest: {0}")]
    Ingest(String),
    #[error("non-monotone axis at data row {row}")]
    NonMonotoneAxis { row: usize },
    #[error("calibration feature {0:?} not found in its window")]
    CalibrationFeatureNotFound(String),
    #[error("plot: {0}")]
    Plot(String),
}

impl HarnessError {
    /// True for errors caused by the configuration rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, HarnessError::Config { .. })
    }
}
