//! Plant and servo stepped on one clock, with the spectroscopy read out
//! quasi-statically at the laser's instantaneous detuning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lock::{find_lock_point, lock_step, LockConfig, LockPhase, LockPoint, LockState, Measurement};
use super::pid::{PidConfig, PidState};
use super::ServoError;
use crate::plant::{step_plant, LaserState, PlantConfig, PlantInputs, RampConfig};
use crate::spectrum::signal::interpolate;
use crate::spectrum::{error_signal, ErrorMode, SpectrumModel, SweepTrace, TraceMeta};

pub const LOCKLOG_FORMAT: &str = "sas-locklog/1";
pub const LOCKLOG_HEADER: &str = "t_s,detuning_hz,error_v,control_v,temperature_k,phase";

/// Lock-detector settings relative to the target feature: thresholds are
/// fractions of the error-signal amplitude (level: of the feature height).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockTuning {
    pub lock_fraction: f64,
    pub loss_fraction: f64,
    pub level_fraction: f64,
    pub hold_time: f64,
    pub loss_time: f64,
    pub relock_delay: f64,
    pub sweep_time: f64,
    pub detector_window: usize,
    pub auto_relock: bool,
}

impl Default for LockTuning {
    fn default() -> Self {
        Self {
            lock_fraction: 0.02,
            loss_fraction: 0.5,
            level_fraction: 0.25,
            hold_time: 20e-3,
            loss_time: 10e-3,
            relock_delay: 100e-3,
            sweep_time: 10e-3,
            detector_window: 10,
            auto_relock: true,
        }
    }
}

impl LockTuning {
    pub fn validate(&self) -> Result<(), ServoError> {
        let fr = [self.lock_fraction, self.loss_fraction, self.level_fraction];
        if !fr.iter().all(|v| v.is_finite() && *v >= 0.0) || !(self.lock_fraction < self.loss_fraction) {
            return Err(ServoError::Invalid(
                "lock fractions must be non-negative with lock_fraction < loss_fraction".into(),
            ));
        }
        let times = [self.hold_time, self.loss_time, self.relock_delay, self.sweep_time];
        if !times.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(ServoError::Invalid("lock timings must be non-negative".into()));
        }
        if self.detector_window == 0 {
            return Err(ServoError::Invalid("detector_window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_config(&self, lock: &LockPoint) -> LockConfig {
        LockConfig {
            lock_threshold: self.lock_fraction * lock.error_amplitude,
            hold_time: self.hold_time,
            loss_threshold: self.loss_fraction * lock.error_amplitude,
            loss_time: self.loss_time,
            relock_delay: self.relock_delay,
            sweep_time: self.sweep_time,
            level_threshold: self.level_fraction * lock.feature_height,
            detector_window: self.detector_window,
            auto_relock: self.auto_relock,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub plant: PlantConfig,
    pub ramp: RampConfig,
    pub pid: PidConfig,
    pub tuning: LockTuning,
    /// Hz
    pub sample_rate: f64,
    /// Reverses the loop sign relative to the one derived from the slope.
    pub invert_polarity: bool,
    /// Static detuning relative to the lock point at which the loop engages, Hz.
    pub engage_offset_hz: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            ramp: RampConfig::default(),
            pid: PidConfig::default(),
            tuning: LockTuning::default(),
            sample_rate: 10e3,
            invert_polarity: false,
            engage_offset_hz: 0.0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), ServoError> {
        self.plant.validate()?;
        self.ramp.validate()?;
        self.pid.validate()?;
        self.tuning.validate()?;
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(ServoError::Invalid("sample_rate must be positive".into()));
        }
        if !self.engage_offset_hz.is_finite() {
            return Err(ServoError::Invalid("engage_offset_hz must be finite".into()));
        }
        Ok(())
    }

    /// Loop sign that makes the feedback negative.
    pub fn polarity(&self, lock: &LockPoint) -> f64 {
        let p = -(lock.slope_sign * self.plant.hz_per_volt()).signum();
        if self.invert_polarity {
            -p
        } else {
            p
        }
    }
}

/// Error and level as memoryless functions of detuning.
#[derive(Debug, Clone)]
pub struct Readout {
    pub feature: String,
    pub lock: LockPoint,
    grid: Vec<f64>,
    error: Vec<f64>,
    level: Vec<f64>,
}

impl Readout {
    /// Tabulates the conditioned error of `trace` around `feature_detuning`
    /// and locates the lock point there. The required offset is folded in.
    pub fn from_trace(
        trace: &SweepTrace,
        feature: impl Into<String>,
        feature_detuning: f64,
        search_halfwidth: f64,
        mode: ErrorMode,
        smoothing_window: usize,
    ) -> Result<Self, ServoError> {
        let lock = find_lock_point(trace, feature_detuning, search_halfwidth, mode, smoothing_window)?;
        let error = error_signal(trace, mode, smoothing_window)?
            .into_iter()
            .map(|e| e + lock.required_offset)
            .collect();
        Ok(Self {
            feature: feature.into(),
            lock,
            grid: trace.detuning_hz.clone(),
            error,
            level: trace.differential.clone(),
        })
    }

    /// Noise-free tabulation of `model` on `[center − halfspan, center + halfspan]`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_model(
        model: &SpectrumModel,
        feature: impl Into<String>,
        feature_detuning: f64,
        search_halfwidth: f64,
        mode: ErrorMode,
        smoothing_window: usize,
        halfspan: f64,
        step: f64,
    ) -> Result<Self, ServoError> {
        if !(halfspan > 0.0 && step > 0.0 && halfspan / step < 1e7) {
            return Err(ServoError::Invalid(
                "readout grid must have positive span and step".into(),
            ));
        }
        let n = (2.0 * halfspan / step).round() as usize + 1;
        let x: Vec<f64> = (0..n).map(|i| feature_detuning - halfspan + i as f64 * step).collect();
        let (reference, probe): (Vec<f64>, Vec<f64>) = x.iter().map(|&v| model.transmission(v)).unzip();
        let diff = probe.iter().zip(&reference).map(|(p, r)| p - r).collect();
        let trace = SweepTrace::new(x, reference, probe, diff, TraceMeta::default())?;
        Self::from_trace(
            &trace,
            feature,
            feature_detuning,
            search_halfwidth,
            mode,
            smoothing_window,
        )
    }

    /// Error at `detuning`, offset included, before loop polarity.
    pub fn error_at(&self, detuning: f64) -> f64 {
        interpolate(&self.grid, &self.error, detuning)
    }

    pub fn level_at(&self, detuning: f64) -> f64 {
        interpolate(&self.grid, &self.level, detuning)
    }

    /// Largest |error| over the tabulated detunings in `[lo, hi]`.
    pub fn peak_error(&self, lo: f64, hi: f64) -> f64 {
        let in_range = self
            .grid
            .iter()
            .zip(&self.error)
            .filter(|(x, _)| **x >= lo && **x <= hi)
            .map(|(_, e)| e.abs());
        in_range
            .chain([self.error_at(lo).abs(), self.error_at(hi).abs()])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartMode {
    /// Ramp on, sweeping around the lock point; the supervisor engages.
    Sweeping,
    /// Already locked with the loop closed.
    Locked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start: StartMode,
    /// Initial static detuning relative to the lock point, Hz.
    pub initial_offset_hz: f64,
    /// (time s, step K) added to the temperature disturbance from that time on.
    pub temperature_steps: Vec<(f64, f64)>,
    /// Time from which the ramp is injected whenever the loop is Locked.
    pub ramp_while_locked_from: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            start: StartMode::Sweeping,
            initial_offset_hz: 0.0,
            temperature_steps: Vec::new(),
            ramp_while_locked_from: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSample {
    pub t: f64,
    pub detuning: f64,
    /// Error as seen by the controller (polarity applied), V.
    pub error: f64,
    pub control: f64,
    pub temperature: f64,
    pub phase: LockPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesLog {
    pub seed: u64,
    pub sample_rate: f64,
    pub lock_point_hz: f64,
    pub polarity: f64,
    pub samples: Vec<LogSample>,
    /// Largest |error| over the detunings covered while sweeping.
    pub sweep_error_peak: Option<f64>,
    /// Set when the run was aborted (partial log).
    pub fault: Option<String>,
}

impl TimeSeriesLog {
    pub fn first_time_in(&self, phase: LockPhase) -> Option<f64> {
        self.samples.iter().find(|s| s.phase == phase).map(|s| s.t)
    }

    pub fn final_phase(&self) -> Option<LockPhase> {
        self.samples.last().map(|s| s.phase)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# format={LOCKLOG_FORMAT}\n"));
        out.push_str(&format!("# seed={}\n", self.seed));
        out.push_str(&format!("# sample_rate_hz={:?}\n", self.sample_rate));
        out.push_str(&format!("# lock_point_hz={:?}\n", self.lock_point_hz));
        if let Some(f) = &self.fault {
            out.push_str(&format!("# fault={}\n", f.replace('\n', " ")));
        }
        out.push_str(LOCKLOG_HEADER);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?},{:?},{}\n",
                s.t, s.detuning, s.error, s.control, s.temperature, s.phase
            ));
        }
        out
    }
}

/// Bias current that puts the static detuning at `target` for the given
/// control voltage and temperature.
fn bias_for(cfg: &PlantConfig, target: f64, control: f64, temperature: f64) -> f64 {
    let thermal = cfg.k_temp * (temperature - cfg.reference_temperature);
    cfg.bias_current - cfg.k_ctrl * control + (target - cfg.base_detuning - thermal) / cfg.k_current
}

/// Runs `scenario` for `duration` seconds.
///
/// A mode-hop fault ends the run early; the partial log is returned with
/// `fault` set.
pub fn closed_loop_run(
    cfg: &LoopConfig,
    readout: &Readout,
    scenario: &Scenario,
    duration: f64,
    seed: u64,
) -> Result<TimeSeriesLog, ServoError> {
    cfg.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(ServoError::Invalid(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let dt = 1.0 / cfg.sample_rate;
    let steps = (duration * cfg.sample_rate).round() as usize;
    let lock_point = readout.lock.lock_point_detuning;
    let polarity = cfg.polarity(&readout.lock);
    let lock_cfg = cfg.tuning.to_config(&readout.lock);
    let temp_setpoint = cfg.plant.reference_temperature;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);

    let mut laser = LaserState::initial(&cfg.plant);
    laser.bias_current = bias_for(
        &cfg.plant,
        lock_point + scenario.initial_offset_hz,
        0.0,
        laser.temperature,
    );
    laser.current = laser.bias_current;
    laser.detuning = lock_point + scenario.initial_offset_hz;

    let phase = match scenario.start {
        StartMode::Sweeping => LockPhase::Sweeping,
        StartMode::Locked => LockPhase::Locked,
    };
    let mut lock = LockState::new(phase, readout.feature.clone(), lock_point);
    let mut pid = PidState::holding(&cfg.pid, 0.0);
    let mut swept: Option<(f64, f64)> = None;

    let ramp_off = RampConfig {
        enabled: false,
        ..cfg.ramp.clone()
    };
    let mut log = TimeSeriesLog {
        seed,
        sample_rate: cfg.sample_rate,
        lock_point_hz: lock_point,
        polarity,
        samples: Vec::with_capacity(steps),
        sweep_error_peak: None,
        fault: None,
    };

    for _ in 0..steps {
        let t = laser.elapsed;
        if lock.phase == LockPhase::Sweeping {
            let (lo, hi) = swept.unwrap_or((laser.detuning, laser.detuning));
            swept = Some((lo.min(laser.detuning), hi.max(laser.detuning)));
        }
        let measurement = Measurement {
            error: polarity * readout.error_at(laser.detuning),
            level: readout.level_at(laser.detuning),
        };
        log.samples.push(LogSample {
            t,
            detuning: laser.detuning,
            error: measurement.error,
            control: laser.control_voltage,
            temperature: laser.temperature,
            phase: lock.phase,
        });

        let (next_lock, next_pid, out) = lock_step(&lock, &pid, &cfg.pid, &lock_cfg, measurement, dt)?;
        debug_assert!(lock.phase.can_transition_to(next_lock.phase));
        lock = next_lock;
        pid = next_pid;
        if out.engaged {
            laser.bias_current = bias_for(
                &cfg.plant,
                lock_point + cfg.engage_offset_hz,
                out.control,
                laser.temperature,
            );
            pid = PidState::holding(&cfg.pid, out.control);
        }
        let injected = scenario.ramp_while_locked_from.is_some_and(|t0| t >= t0) && lock.phase == LockPhase::Locked;
        let ramp = if out.ramp_enable || injected {
            &cfg.ramp
        } else {
            &ramp_off
        };

        let disturbance: f64 = scenario
            .temperature_steps
            .iter()
            .filter(|(t0, _)| t + dt >= *t0)
            .map(|(_, k)| k)
            .sum();
        let inputs = PlantInputs {
            control_voltage: out.control,
            temp_setpoint,
            disturbance,
        };
        match step_plant(&laser, &cfg.plant, ramp, &inputs, dt, &mut rng) {
            Ok(next) => laser = next,
            Err(e) => {
                log.fault = Some(e.to_string());
                break;
            }
        }
    }
    log.sweep_error_peak = swept.map(|(lo, hi)| readout.peak_error(lo, hi));
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic_data::{FeatureId, LineTable};
    use crate::spectrum::MediumConfig;

    fn readout() -> Readout {
        let table = LineTable::bundled();
        let model = SpectrumModel::new(&table, &MediumConfig::default()).unwrap();
        let id = FeatureId::default_pump();
        let f = model
            .features()
            .iter()
            .find(|f| f.isotope == id.isotope && f.f_ground == id.f_ground && f.label == id.label)
            .unwrap();
        Readout::from_model(
            &model,
            id.to_string(),
            f.profile.nu0,
            f.profile.gamma_fwhm,
            ErrorMode::Derivative,
            41,
            400e6,
            0.1e6,
        )
        .unwrap()
    }

    fn quiet() -> LoopConfig {
        let mut c = LoopConfig::default();
        c.plant.linewidth = 0.0;
        c.plant.drift_rate = 0.0;
        c
    }

    #[test]
    fn equilibrium_is_exact() {
        let r = readout();
        let sc = Scenario {
            start: StartMode::Locked,
            ..Default::default()
        };
        let log = closed_loop_run(&quiet(), &r, &sc, 0.2, 1).unwrap();
        // exact up to the rounding of the bias current
        assert!(log
            .samples
            .iter()
            .all(|s| s.error.abs() < 1e-9 * r.lock.error_amplitude));
        let c0 = log.samples[1].control;
        assert!(log.samples.iter().skip(1).all(|s| (s.control - c0).abs() < 1e-12));
        assert!(log.samples.iter().all(|s| s.phase == LockPhase::Locked));
    }

    #[test]
    fn small_offsets_decay() {
        let r = readout();
        let cfg = quiet();
        for sign in [-1.0, 1.0] {
            let sc = Scenario {
                start: StartMode::Locked,
                initial_offset_hz: sign * 0.25 * 6e6,
                ..Default::default()
            };
            let log = closed_loop_run(&cfg, &r, &sc, 0.05, 1).unwrap();
            let last = log.samples.last().unwrap();
            assert!(last.error.abs() < cfg.tuning.lock_fraction * r.lock.error_amplitude);
            assert_eq!(last.phase, LockPhase::Locked);
        }
    }

    #[test]
    fn wrong_polarity_diverges() {
        let r = readout();
        let cfg = LoopConfig {
            invert_polarity: true,
            ..quiet()
        };
        let sc = Scenario {
            start: StartMode::Locked,
            initial_offset_hz: 0.2e6,
            ..Default::default()
        };
        let log = closed_loop_run(&cfg, &r, &sc, 101.0 / cfg.sample_rate, 1).unwrap();
        // the error itself folds over past the dispersive peak, the distance does not
        let away = |i: usize| (log.samples[i].detuning - log.lock_point_hz).abs();
        assert!(away(100) > 10.0 * away(0));
        assert!((1..=100).all(|i| away(i) >= away(i - 1)));
    }

    #[test]
    fn phase_sequence_is_legal_and_seeded() {
        let r = readout();
        let cfg = LoopConfig::default();
        let a = closed_loop_run(&cfg, &r, &Scenario::default(), 0.1, 9).unwrap();
        let b = closed_loop_run(&cfg, &r, &Scenario::default(), 0.1, 9).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.samples.windows(2).all(|w| w[0].phase.can_transition_to(w[1].phase)));
        assert!(a.sweep_error_peak.unwrap() > 0.0);
    }

    #[test]
    fn mode_hop_returns_partial_log() {
        let r = readout();
        let sc = Scenario {
            start: StartMode::Locked,
            temperature_steps: vec![(0.01, 2.0)],
            ..Default::default()
        };
        let mut cfg = quiet();
        cfg.plant.thermal_tau = 1e-3;
        let log = closed_loop_run(&cfg, &r, &sc, 0.5, 1).unwrap();
        assert!(log.fault.is_some());
        assert!(log.samples.len() < 5000);
    }
}
