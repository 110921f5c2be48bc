//! Saturated absorption sweeps: synthesis, depth markers, line fitting and
//! error-signal conditioning.

mod error_signal;
mod fit;
mod markers;
pub mod signal;
mod synth;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::atomic_data::AtomicDataError;
use crate::lineshape::LineshapeError;

pub use error_signal::{error_signal, ErrorMode};
pub use fit::{fit_lineshape, FitModel, FitParams, FitResult};
pub use markers::{depth_metrics, extract_markers, DepthMarkers, DepthMetrics, MarkerSelection};
pub use synth::{doppler_widths, synthesize_sweep, DipFeature, SpectrumModel};

pub const TRACE_FORMAT: &str = "sas-trace/1";
pub const TRACE_HEADER: &str = "detuning_hz,reference_v,probe_v,differential_v";

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error(transparent)]
    Atomic(#[from] AtomicDataError),
    #[error(transparent)]
    Lineshape(#[from] LineshapeError),
    #[error("line table has no lines")]
    EmptyTable,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("invalid medium: {0}")]
    InvalidMedium(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("window {0:.6e}..{1:.6e} Hz is outside the trace or contains no features")]
    BadWindow(f64, f64),
    #[error("no sub-Doppler feature found near {0}")]
    NoSubDopplerFeatures(String),
    #[error("no samples outside the Doppler windows to set the baseline")]
    NoBaseline,
    #[error("invalid smoothing window {0}")]
    InvalidWindow(usize),
    #[error("fit needs at least 8 samples, got {0}")]
    TooFewSamples(usize),
    #[error("fit did not converge after {iterations} iterations (rms {rms:.3e})")]
    NoConvergence { iterations: usize, rms: f64 },
    #[error("depth metrics need a non-zero baseline A")]
    ZeroBaseline,
}

/// Absorbing medium and pump parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumConfig {
    pub temperature_k: f64,
    /// Peak optical depth of the strongest Doppler manifold.
    pub peak_optical_depth: f64,
    /// Pump saturation parameter s.
    pub saturation_s: f64,
    pub crossover_enhancement: f64,
    /// Fraction of the saturated absorption removed at a dip centre, in [0, 1].
    pub dip_contrast: f64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self {
            temperature_k: 312.65,
            peak_optical_depth: 1.8,
            saturation_s: 2.0,
            crossover_enhancement: 2.0,
            dip_contrast: 0.6,
        }
    }
}

impl MediumConfig {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        let bad = |m: &str| Err(SpectrumError::InvalidMedium(m.to_string()));
        if !(self.temperature_k > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.peak_optical_depth > 0.0) || !self.peak_optical_depth.is_finite() {
            return bad("peak optical depth must be positive");
        }
        if !(self.saturation_s >= 0.0) || !self.saturation_s.is_finite() {
            return bad("saturation parameter must be non-negative");
        }
        if !(self.crossover_enhancement > 0.0) {
            return bad("crossover enhancement must be positive");
        }
        if !(0.0..=1.0).contains(&self.dip_contrast) {
            return bad("dip contrast must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub samples: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            start_hz: -1.5e9,
            stop_hz: 7.5e9,
            samples: 18_001,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        if !(self.start_hz < self.stop_hz) || !self.start_hz.is_finite() || !self.stop_hz.is_finite() {
            return Err(SpectrumError::InvalidSweep(format!(
                "start {} must be below stop {}",
                self.start_hz, self.stop_hz
            )));
        }
        if self.samples < 16 {
            return Err(SpectrumError::InvalidSweep(format!(
                "need at least 16 samples, got {}",
                self.samples
            )));
        }
        Ok(())
    }

    pub fn axis(&self) -> Vec<f64> {
        let step = (self.stop_hz - self.start_hz) / (self.samples - 1) as f64;
        (0..self.samples).map(|i| self.start_hz + i as f64 * step).collect()
    }
}

/// Additive white Gaussian detector noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-channel standard deviation in volts; 0 disables noise.
    pub sigma_v: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma_v: 2e-3, seed: 1 }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self { sigma_v: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub samples_per_ramp: usize,
    pub noise_seed: u64,
    pub config_hash: String,
}

/// Sampled detector channels over a strictly increasing detuning axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrace {
    pub detuning_hz: Vec<f64>,
    pub reference: Vec<f64>,
    pub probe: Vec<f64>,
    pub differential: Vec<f64>,
    pub meta: TraceMeta,
}

impl SweepTrace {
    pub fn new(
        detuning_hz: Vec<f64>,
        reference: Vec<f64>,
        probe: Vec<f64>,
        differential: Vec<f64>,
        meta: TraceMeta,
    ) -> Result<Self, SpectrumError> {
        let n = detuning_hz.len();
        if n < 2 {
            return Err(SpectrumError::InvalidTrace("need at least two samples".into()));
        }
        if reference.len() != n || probe.len() != n || differential.len() != n {
            return Err(SpectrumError::InvalidTrace("channel lengths differ".into()));
        }
        if detuning_hz.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectrumError::InvalidTrace(
                "detuning axis is not strictly increasing".into(),
            ));
        }
        if reference.iter().chain(&probe).any(|v| !(*v >= 0.0)) {
            return Err(SpectrumError::InvalidTrace(
                "detector channels must be non-negative".into(),
            ));
        }
        Ok(Self {
            detuning_hz,
            reference,
            probe,
            differential,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.detuning_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detuning_hz.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.detuning_hz[0], *self.detuning_hz.last().unwrap())
    }

    /// Mean sample spacing in Hz.
    pub fn step_hz(&self) -> f64 {
        let (a, b) = self.span();
        (b - a) / (self.len() - 1) as f64
    }

    /// Index of the sample closest to `detuning`.
    pub fn nearest_index(&self, detuning: f64) -> usize {
        let i = self.detuning_hz.partition_point(|&x| x < detuning);
        if i == 0 {
            0
        } else if i >= self.len() {
            self.len() - 1
        } else if (detuning - self.detuning_hz[i - 1]) <= (self.detuning_hz[i] - detuning) {
            i - 1
        } else {
            i
        }
    }

    /// Samples whose detuning lies in `[lo, hi]`.
    pub fn index_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.detuning_hz.partition_point(|&x| x < lo);
        let b = self.detuning_hz.partition_point(|&x| x <= hi);
        a..b.max(a)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<SweepTrace, SpectrumError> {
        SweepTrace::new(
            self.detuning_hz[range.clone()].to_vec(),
            self.reference[range.clone()].to_vec(),
            self.probe[range.clone()].to_vec(),
            self.differential[range].to_vec(),
            self.meta.clone(),
        )
    }

    /// CSV export, `sas-trace/1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 80);
        let _ = writeln!(out, "# format={TRACE_FORMAT}");
        let _ = writeln!(out, "# seed={}", self.meta.noise_seed);
        let _ = writeln!(out, "# config_hash={}", self.meta.config_hash);
        let _ = writeln!(out, "# samples_per_ramp={}", self.meta.samples_per_ramp);
        let _ = writeln!(out, "{TRACE_HEADER}");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?}",
                self.detuning_hz[i], self.reference[i], self.probe[i], self.differential[i]
            );
        }
        out
    }
}

/// First 16 hex digits of SHA-256 over `text`.
pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}
