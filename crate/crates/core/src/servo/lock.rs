//! Lock acquisition: Sweeping → Engaging → Locked, Locked → Lost,
//! Lost → Sweeping.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::pid::{pid_step, PidConfig, PidState};
use super::ServoError;
use crate::spectrum::{error_signal, ErrorMode, SweepTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LockPhase {
    Sweeping,
    Engaging,
    Locked,
    Lost,
}

impl LockPhase {
    pub fn can_transition_to(self, next: LockPhase) -> bool {
        use LockPhase::*;
        self == next
            || matches!(
                (self, next),
                (Sweeping, Engaging) | (Engaging, Locked) | (Locked, Lost) | (Lost, Sweeping)
            )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LockPhase::Sweeping => "sweeping",
            LockPhase::Engaging => "engaging",
            LockPhase::Locked => "locked",
            LockPhase::Lost => "lost",
        }
    }
}

impl std::str::FromStr for LockPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sweeping" => Ok(LockPhase::Sweeping),
            "engaging" => Ok(LockPhase::Engaging),
            "locked" => Ok(LockPhase::Locked),
            "lost" => Ok(LockPhase::Lost),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

impl std::fmt::Display for LockPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Absolute thresholds and timings of the lock detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockConfig {
    /// |error| below which the loop counts as settled, V.
    pub lock_threshold: f64,
    pub hold_time: f64,
    /// |error| above which the lock counts as failing, V.
    pub loss_threshold: f64,
    pub loss_time: f64,
    pub relock_delay: f64,
    /// Time spent sweeping before the lock is engaged.
    pub sweep_time: f64,
    /// Minimum spectroscopy level (differential signal) for "on feature".
    pub level_threshold: f64,
    /// Moving-average length of the detector applied to the error, samples.
    pub detector_window: usize,
    pub auto_relock: bool,
}

impl Default for LockConfig {
    fn default() -> Self {
        Self {
            lock_threshold: 0.02,
            hold_time: 20e-3,
            loss_threshold: 0.5,
            loss_time: 10e-3,
            relock_delay: 100e-3,
            sweep_time: 10e-3,
            level_threshold: f64::NEG_INFINITY,
            detector_window: 10,
            auto_relock: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockState {
    pub phase: LockPhase,
    pub target_feature: String,
    pub lock_point_detuning: f64,
    pub time_in_phase: f64,
    /// How long the pending transition condition has held.
    pub condition_time: f64,
    detector: VecDeque<f64>,
}

impl LockState {
    pub fn new(phase: LockPhase, target_feature: impl Into<String>, lock_point_detuning: f64) -> Self {
        Self {
            phase,
            target_feature: target_feature.into(),
            lock_point_detuning,
            time_in_phase: 0.0,
            condition_time: 0.0,
            detector: VecDeque::new(),
        }
    }

    fn enter(&mut self, phase: LockPhase) {
        debug_assert!(self.phase.can_transition_to(phase));
        self.phase = phase;
        self.time_in_phase = 0.0;
        self.condition_time = 0.0;
        self.detector.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Conditioned, polarity-corrected error, V.
    pub error: f64,
    /// Spectroscopy level at the current detuning, V.
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockOutput {
    pub control: f64,
    pub ramp_enable: bool,
    /// Set on the step that moved Sweeping → Engaging.
    pub engaged: bool,
}

/// One step of the lock supervisor.
///
/// Sweeping and Lost hold the controller output; Engaging and Locked run
/// the PID. The detector compares |moving average of error| against the
/// thresholds and also requires the spectroscopy level to stay above
/// `level_threshold`, so the loop cannot "lock" on the flat background.
pub fn lock_step(
    lock: &LockState,
    pid: &PidState,
    pid_cfg: &PidConfig,
    cfg: &LockConfig,
    measurement: Measurement,
    dt: f64,
) -> Result<(LockState, PidState, LockOutput), ServoError> {
    if !(dt > 0.0) {
        return Err(ServoError::Invalid(format!("dt must be positive, got {dt}")));
    }
    let mut next = lock.clone();
    next.time_in_phase += dt;
    let mut pid = pid.clone();
    let mut engaged = false;

    next.detector.push_back(measurement.error);
    while next.detector.len() > cfg.detector_window.max(1) {
        next.detector.pop_front();
    }
    let detected = (next.detector.iter().sum::<f64>() / next.detector.len() as f64).abs();
    let on_feature = measurement.level >= cfg.level_threshold;

    let control = match lock.phase {
        LockPhase::Sweeping => {
            if next.time_in_phase >= cfg.sweep_time {
                next.enter(LockPhase::Engaging);
                engaged = true;
            }
            pid.last_output
        }
        LockPhase::Engaging => {
            let (p, u) = pid_step(pid_cfg, &pid, measurement.error, dt)?;
            pid = p;
            if detected < cfg.lock_threshold && on_feature {
                next.condition_time += dt;
            } else {
                next.condition_time = 0.0;
            }
            if next.condition_time >= cfg.hold_time {
                next.enter(LockPhase::Locked);
            }
            u
        }
        LockPhase::Locked => {
            let (p, u) = pid_step(pid_cfg, &pid, measurement.error, dt)?;
            pid = p;
            if detected > cfg.loss_threshold || !on_feature {
                next.condition_time += dt;
            } else {
                next.condition_time = 0.0;
            }
            if next.condition_time >= cfg.loss_time {
                next.enter(LockPhase::Lost);
            }
            u
        }
        LockPhase::Lost => {
            if cfg.auto_relock && next.time_in_phase >= cfg.relock_delay {
                next.enter(LockPhase::Sweeping);
            }
            pid.last_output
        }
    };

    let ramp_enable = next.phase == LockPhase::Sweeping;
    Ok((
        next,
        pid,
        LockOutput {
            control,
            ramp_enable,
            engaged,
        },
    ))
}

/// Where and how to lock on a swept trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockPoint {
    pub lock_point_detuning: f64,
    /// Sign of d(error)/d(detuning) at the lock point.
    pub slope_sign: f64,
    /// d(error)/d(detuning) at the lock point, V/Hz (before offset).
    pub slope: f64,
    /// Offset added to the error signal so it crosses zero at the lock point.
    pub required_offset: f64,
    /// Peak |error| of the feature's error signal after the offset.
    pub error_amplitude: f64,
    /// Differential-signal height of the feature.
    pub feature_height: f64,
}

/// Finds the zero crossing of the conditioned error signal on the feature
/// nominally at `feature_detuning`.
///
/// Derivative mode locks to the feature centre; Differential mode locks to
/// the half-height point on the low-detuning side, with the offset that
/// moves the zero there.
pub fn find_lock_point(
    trace: &SweepTrace,
    feature_detuning: f64,
    search_halfwidth: f64,
    mode: ErrorMode,
    smoothing_window: usize,
) -> Result<LockPoint, ServoError> {
    let e = error_signal(trace, mode, smoothing_window)?;
    let x = &trace.detuning_hz;
    let d = &trace.differential;
    let r = trace.index_range(feature_detuning - search_halfwidth, feature_detuning + search_halfwidth);
    if r.len() < 3 {
        return Err(ServoError::FeatureNotFound(feature_detuning));
    }
    let peak = r.clone().max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
    let height = d[peak];
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(height > 1e-9) || peak == r.start || peak + 1 == r.end || height < 1e-3 * scale {
        return Err(ServoError::Unlockable(format!(
            "no sub-Doppler peak near {feature_detuning:.6e} Hz"
        )));
    }

    let (lock_point, slope, offset) = match mode {
        ErrorMode::Derivative => {
            // nearest sign change of the derivative around the peak sample
            let mut best: Option<usize> = None;
            for i in r.start..r.end - 1 {
                if (e[i] > 0.0) != (e[i + 1] > 0.0) {
                    let dist = (i as isize - peak as isize).abs();
                    if best.is_none_or(|b| dist < (b as isize - peak as isize).abs()) {
                        best = Some(i);
                    }
                }
            }
            let i = best.ok_or_else(|| ServoError::Unlockable("derivative has no zero crossing".into()))?;
            let t = e[i] / (e[i] - e[i + 1]);
            let xl = x[i] + t * (x[i + 1] - x[i]);
            let slope = (e[i + 1] - e[i]) / (x[i + 1] - x[i]);
            (xl, slope, 0.0)
        }
        ErrorMode::Differential => {
            let half = 0.5 * height;
            let mut i = peak;
            while i > r.start && d[i] > half {
                i -= 1;
            }
            if d[i] > half {
                return Err(ServoError::Unlockable("half-height point outside search window".into()));
            }
            let t = (half - d[i]) / (d[i + 1] - d[i]);
            let xl = x[i] + t * (x[i + 1] - x[i]);
            let slope = (d[i + 1] - d[i]) / (x[i + 1] - x[i]);
            (xl, slope, -half)
        }
    };

    let amplitude = r.clone().map(|k| (e[k] + offset).abs()).fold(0.0, f64::max);
    if !(slope.abs() * search_halfwidth > 1e-6 * amplitude.max(1e-300)) || slope == 0.0 {
        return Err(ServoError::Unlockable("slope too small".into()));
    }
    Ok(LockPoint {
        lock_point_detuning: lock_point,
        slope_sign: slope.signum(),
        slope,
        required_offset: offset,
        error_amplitude: amplitude,
        feature_height: height,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::TraceMeta;

    fn cfg() -> LockConfig {
        LockConfig {
            detector_window: 1,
            ..Default::default()
        }
    }

    fn pid() -> PidConfig {
        PidConfig {
            kp: 1.0,
            ki: 10.0,
            ..Default::default()
        }
    }

    fn run(
        mut lock: LockState,
        mut st: PidState,
        error: f64,
        steps: usize,
        c: &LockConfig,
    ) -> (LockState, PidState, Vec<LockOutput>) {
        let mut outs = Vec::new();
        for _ in 0..steps {
            let (l, p, o) = lock_step(&lock, &st, &pid(), c, Measurement { error, level: 1.0 }, 1e-4).unwrap();
            assert!(lock.phase.can_transition_to(l.phase));
            lock = l;
            st = p;
            outs.push(o);
        }
        (lock, st, outs)
    }

    #[test]
    fn stays_locked_at_zero_error() {
        let lock = LockState::new(LockPhase::Locked, "x", 0.0);
        let st = PidState::holding(&pid(), 1.5);
        let (l, _, outs) = run(lock, st, 0.0, 5000, &cfg());
        assert_eq!(l.phase, LockPhase::Locked);
        assert!(outs.iter().all(|o| o.control == 1.5 && !o.ramp_enable));
    }

    #[test]
    fn engaging_locks_after_hold_time() {
        let c = cfg();
        let lock = LockState::new(LockPhase::Engaging, "x", 0.0);
        let n = (c.hold_time / 1e-4).round() as usize;
        let (l, _, _) = run(lock.clone(), PidState::default(), 0.5 * c.lock_threshold, n - 2, &c);
        assert_eq!(l.phase, LockPhase::Engaging);
        let (l, _, _) = run(lock, PidState::default(), 0.5 * c.lock_threshold, n + 1, &c);
        assert_eq!(l.phase, LockPhase::Locked);
    }

    #[test]
    fn loss_then_relock() {
        let c = cfg();
        let lock = LockState::new(LockPhase::Locked, "x", 0.0);
        let n_loss = (c.loss_time / 1e-4).round() as usize + 1;
        let (l, st, outs) = run(lock, PidState::default(), 10.0 * c.loss_threshold, n_loss, &c);
        assert_eq!(l.phase, LockPhase::Lost);
        let frozen = outs.last().unwrap().control;
        let n_relock = (c.relock_delay / 1e-4).round() as usize + 1;
        let (l, _, outs) = run(l, st, 10.0 * c.loss_threshold, n_relock, &c);
        assert_eq!(l.phase, LockPhase::Sweeping);
        assert!(outs.iter().all(|o| o.control == frozen));
        assert!(outs.last().unwrap().ramp_enable);
    }

    #[test]
    fn sweeping_engages_after_sweep_time() {
        let c = cfg();
        let lock = LockState::new(LockPhase::Sweeping, "x", 0.0);
        let n = (c.sweep_time / 1e-4).round() as usize + 1;
        let (l, _, outs) = run(lock, PidState::default(), 0.3, n, &c);
        assert_eq!(l.phase, LockPhase::Engaging);
        assert_eq!(outs.iter().filter(|o| o.engaged).count(), 1);
    }

    #[test]
    fn off_feature_never_locks() {
        let c = LockConfig {
            level_threshold: 0.1,
            ..cfg()
        };
        let mut lock = LockState::new(LockPhase::Engaging, "x", 0.0);
        let mut st = PidState::default();
        for _ in 0..1000 {
            let (l, p, _) = lock_step(&lock, &st, &pid(), &c, Measurement { error: 0.0, level: 0.0 }, 1e-4).unwrap();
            lock = l;
            st = p;
        }
        assert_eq!(lock.phase, LockPhase::Engaging);
    }

    #[test]
    fn transition_table() {
        use LockPhase::*;
        let all = [Sweeping, Engaging, Locked, Lost];
        let legal: Vec<_> = all
            .iter()
            .flat_map(|&a| all.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| a != b && a.can_transition_to(b))
            .collect();
        assert_eq!(
            legal,
            vec![
                (Sweeping, Engaging),
                (Engaging, Locked),
                (Locked, Lost),
                (Lost, Sweeping)
            ]
        );
    }

    fn dip(center: f64, height: f64) -> SweepTrace {
        let x: Vec<f64> = (0..2001).map(|i| -100e6 + i as f64 * 0.1e6).collect();
        let d: Vec<f64> = x
            .iter()
            .map(|&v| height / (1.0 + (2.0 * (v - center) / 10e6).powi(2)))
            .collect();
        let z = vec![0.0; x.len()];
        SweepTrace::new(x, z.clone(), z, d, TraceMeta::default()).unwrap()
    }

    #[test]
    fn derivative_lock_point_at_centre() {
        let tr = dip(3.05e6, 0.2);
        let lp = find_lock_point(&tr, 3e6, 30e6, ErrorMode::Derivative, 5).unwrap();
        assert!((lp.lock_point_detuning - 3.05e6).abs() <= tr.step_hz());
        assert_eq!(lp.required_offset, 0.0);
        assert_eq!(lp.slope_sign, -1.0);
    }

    #[test]
    fn differential_lock_point_half_height() {
        let tr = dip(0.0, 0.2);
        let lp = find_lock_point(&tr, 0.0, 40e6, ErrorMode::Differential, 1).unwrap();
        assert!((lp.required_offset + 0.1).abs() <= 0.02 * 0.1);
        assert!((lp.lock_point_detuning + 5e6).abs() < 0.2e6);
        assert_eq!(lp.slope_sign, 1.0);
    }

    #[test]
    fn flat_trace_unlockable() {
        let tr = dip(0.0, 0.0);
        assert!(matches!(
            find_lock_point(&tr, 0.0, 30e6, ErrorMode::Derivative, 5),
            Err(ServoError::Unlockable(_))
        ));
    }
}
