//! Discrete-time DBR laser: optical detuning as an affine function of
//! injection current and chip temperature, plus ramp modulation, white
//! frequency noise and slow thermal drift.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("mode hop: detuning {detuning_hz:.6e} Hz is {excursion_hz:.6e} Hz from base, envelope ±{half_span_hz:.6e} Hz (t = {elapsed_s:.6} s)")]
    ModeHop {
        detuning_hz: f64,
        excursion_hz: f64,
        half_span_hz: f64,
        elapsed_s: f64,
    },
    #[error("invalid plant config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Hz/A
    pub k_current: f64,
    /// Hz/K
    pub k_temp: f64,
    /// A/V, servo voltage to injection current.
    pub k_ctrl: f64,
    /// Lorentzian FWHM of the free-running laser, Hz.
    pub linewidth: f64,
    /// Mode-hop-free tuning range, Hz (peak to peak).
    pub mode_hop_span: f64,
    /// K/s
    pub drift_rate: f64,
    /// Detuning at reference temperature, bias current and zero control, Hz.
    pub base_detuning: f64,
    /// A
    pub bias_current: f64,
    /// Temperature at which the thermal tuning term vanishes, K.
    pub reference_temperature: f64,
    /// First-order thermal time constant of the laser mount, s.
    pub thermal_tau: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            k_current: -1e12,
            k_temp: 28e9,
            k_ctrl: 1e-3,
            linewidth: 0.5e6,
            mode_hop_span: 30e9,
            drift_rate: 0.1e-3 / 3600.0,
            base_detuning: 0.0,
            bias_current: 0.15,
            reference_temperature: 298.15,
            thermal_tau: 2.0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::Invalid(m.to_string()));
        let finite = [
            self.k_current,
            self.k_temp,
            self.k_ctrl,
            self.linewidth,
            self.mode_hop_span,
            self.drift_rate,
            self.base_detuning,
            self.bias_current,
            self.reference_temperature,
            self.thermal_tau,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all coefficients must be finite");
        }
        if self.k_current == 0.0 {
            return bad("k_current must be non-zero");
        }
        if self.k_ctrl == 0.0 {
            return bad("k_ctrl must be non-zero");
        }
        if self.linewidth < 0.0 {
            return bad("linewidth must be non-negative");
        }
        if !(self.mode_hop_span > 0.0) {
            return bad("mode_hop_span must be positive");
        }
        if !(self.thermal_tau > 0.0) {
            return bad("thermal_tau must be positive");
        }
        if !(self.reference_temperature > 0.0) {
            return bad("reference_temperature must be positive");
        }
        Ok(())
    }

    /// Optical detuning per servo volt, Hz/V.
    pub fn hz_per_volt(&self) -> f64 {
        self.k_current * self.k_ctrl
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RampShape {
    Triangle,
    Sawtooth,
}

impl std::str::FromStr for RampShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "triangle" => Ok(RampShape::Triangle),
            "sawtooth" => Ok(RampShape::Sawtooth),
            other => Err(format!("unknown ramp shape {other:?}")),
        }
    }
}

impl std::fmt::Display for RampShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RampShape::Triangle => "triangle",
            RampShape::Sawtooth => "sawtooth",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampConfig {
    /// Repetition rate, Hz.
    pub frequency: f64,
    /// Peak-to-peak optical detuning, Hz.
    pub span: f64,
    pub shape: RampShape,
    pub enabled: bool,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            frequency: 500.0,
            span: 600e6,
            shape: RampShape::Triangle,
            enabled: true,
        }
    }
}

impl RampConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.frequency > 0.0) || !self.frequency.is_finite() {
            return Err(PlantError::Invalid("ramp frequency must be positive".into()));
        }
        if !(self.span >= 0.0) || !self.span.is_finite() {
            return Err(PlantError::Invalid("ramp span must be non-negative".into()));
        }
        Ok(())
    }

    pub fn phase(&self, t: f64) -> f64 {
        let p = (t * self.frequency).fract();
        if p < 0.0 {
            p + 1.0
        } else {
            p
        }
    }
}

/// Ramp offset at time `t`; starts at −span/2.
pub fn ramp_waveform(t: f64, r: &RampConfig) -> f64 {
    if !r.enabled {
        return 0.0;
    }
    let p = r.phase(t);
    let unit = match r.shape {
        RampShape::Triangle => {
            if p < 0.5 {
                2.0 * p
            } else {
                2.0 - 2.0 * p
            }
        }
        RampShape::Sawtooth => p,
    };
    r.span * (unit - 0.5)
}

/// White frequency noise sample with standard deviation
/// `σ = √(linewidth / (2π dt))`.
///
/// A white frequency-noise PSD `S` (one-sided, Hz²/Hz) gives a Lorentzian
/// line of FWHM `π S`; a sampled sequence with variance σ² at spacing dt has
/// `S = 2 σ² dt`.
pub fn frequency_noise_sample<R: Rng + ?Sized>(linewidth: f64, dt: f64, rng: &mut R) -> f64 {
    if linewidth <= 0.0 {
        return 0.0;
    }
    let sigma = (linewidth / (2.0 * std::f64::consts::PI * dt)).sqrt();
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserState {
    /// Injection current, A.
    pub current: f64,
    /// Bias current set by the operator (or the engage procedure), A.
    pub bias_current: f64,
    /// Chip temperature, K.
    pub temperature: f64,
    /// Accumulated thermal drift contained in `temperature`, K.
    pub drift: f64,
    pub control_voltage: f64,
    /// In [0, 1).
    pub ramp_phase: f64,
    /// Instantaneous detuning from the carrier, Hz.
    pub detuning: f64,
    pub elapsed: f64,
}

impl LaserState {
    /// At reference temperature, bias current and zero control voltage.
    pub fn initial(cfg: &PlantConfig) -> Self {
        Self {
            current: cfg.bias_current,
            bias_current: cfg.bias_current,
            temperature: cfg.reference_temperature,
            drift: 0.0,
            control_voltage: 0.0,
            ramp_phase: 0.0,
            detuning: cfg.base_detuning,
            elapsed: 0.0,
        }
    }

    /// Detuning this state would have without ramp and noise.
    pub fn static_detuning(&self, cfg: &PlantConfig) -> f64 {
        cfg.base_detuning
            + cfg.k_current * (self.current - cfg.bias_current)
            + cfg.k_temp * (self.temperature - cfg.reference_temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantInputs {
    pub control_voltage: f64,
    /// Temperature controller setpoint, K.
    pub temp_setpoint: f64,
    /// Additive temperature disturbance, K.
    pub disturbance: f64,
}

/// Advances the laser by `dt`.
///
/// The mount temperature relaxes toward `setpoint + disturbance` with time
/// constant `thermal_tau` (exact exponential update); drift accumulates on
/// top at `drift_rate`.
pub fn step_plant<R: Rng + ?Sized>(
    state: &LaserState,
    cfg: &PlantConfig,
    ramp: &RampConfig,
    inputs: &PlantInputs,
    dt: f64,
    rng: &mut R,
) -> Result<LaserState, PlantError> {
    if !(dt > 0.0) {
        return Err(PlantError::Invalid(format!("dt must be positive, got {dt}")));
    }
    let elapsed = state.elapsed + dt;
    let target = inputs.temp_setpoint + inputs.disturbance;
    let relaxed = state.temperature - state.drift;
    let alpha = 1.0 - (-dt / cfg.thermal_tau).exp();
    let relaxed = relaxed + alpha * (target - relaxed);
    let drift = cfg.drift_rate * elapsed;
    let temperature = relaxed + drift;

    let current = state.bias_current + cfg.k_ctrl * inputs.control_voltage;
    let static_detuning = cfg.base_detuning
        + cfg.k_current * (current - cfg.bias_current)
        + cfg.k_temp * (temperature - cfg.reference_temperature);
    let detuning = static_detuning + ramp_waveform(elapsed, ramp) + frequency_noise_sample(cfg.linewidth, dt, rng);

    let excursion = detuning - cfg.base_detuning;
    if excursion.abs() > 0.5 * cfg.mode_hop_span {
        return Err(PlantError::ModeHop {
            detuning_hz: detuning,
            excursion_hz: excursion,
            half_span_hz: 0.5 * cfg.mode_hop_span,
            elapsed_s: elapsed,
        });
    }
    Ok(LaserState {
        current,
        bias_current: state.bias_current,
        temperature,
        drift,
        control_voltage: inputs.control_voltage,
        ramp_phase: ramp.phase(elapsed),
        detuning,
        elapsed,
    })
}
