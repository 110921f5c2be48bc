//! PID control law, lock supervisor and the closed-loop runner.

mod closed_loop;
mod lock;
mod pid;

pub use closed_loop::{
    closed_loop_run, LockTuning, LogSample, LoopConfig, Readout, Scenario, StartMode, TimeSeriesLog, LOCKLOG_FORMAT,
    LOCKLOG_HEADER,
};
pub use lock::{find_lock_point, lock_step, LockConfig, LockOutput, LockPhase, LockPoint, LockState, Measurement};
pub use pid::{pid_step, pid_step_terms, PidConfig, PidState, PidTerms};

use thiserror::Error;

use crate::plant::PlantError;
use crate::spectrum::SpectrumError;

#[derive(Debug, Error)]
pub enum ServoError {
    #[error("invalid servo config: {0}")]
    Invalid(String),
    #[error("no feature found near {0:.6e} Hz")]
    FeatureNotFound(f64),
    #[error("unlockable: {0}")]
    Unlockable(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}
