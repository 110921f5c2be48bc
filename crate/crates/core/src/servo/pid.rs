use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::ServoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    pub kp: f64,
    /// 1/s
    pub ki: f64,
    /// s
    pub kd: f64,
    /// Added to the output before clamping, V.
    pub offset: f64,
    pub output_min: f64,
    pub output_max: f64,
    /// Moving-average length applied to the error before differentiation.
    pub derivative_smoothing: usize,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            kp: 0.02,
            ki: 250.0,
            kd: 0.0,
            offset: 0.0,
            output_min: -10.0,
            output_max: 10.0,
            derivative_smoothing: 4,
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<(), ServoError> {
        if ![self.kp, self.ki, self.kd, self.offset, self.output_min, self.output_max]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(ServoError::Invalid("PID parameters must be finite".into()));
        }
        if !(self.output_min < self.output_max) {
            return Err(ServoError::Invalid("output_min must be below output_max".into()));
        }
        if self.derivative_smoothing < 1 {
            return Err(ServoError::Invalid("derivative_smoothing must be at least 1".into()));
        }
        Ok(())
    }

    pub fn full_scale(&self) -> f64 {
        self.output_max - self.output_min
    }
}

/// Controller memory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// Integral term, V. Kept inside `[output_min − offset, output_max − offset]`.
    pub integrator: f64,
    pub prev_error: Option<f64>,
    pub last_output: f64,
    history: VecDeque<f64>,
    prev_smoothed: Option<f64>,
}

impl PidState {
    /// State whose quiescent output (zero error) is `output`.
    pub fn holding(cfg: &PidConfig, output: f64) -> Self {
        let output = output.clamp(cfg.output_min, cfg.output_max);
        Self {
            integrator: output - cfg.offset,
            last_output: output,
            ..Default::default()
        }
    }
}

/// The individual terms of the last step, for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidTerms {
    pub proportional: f64,
    pub integral: f64,
    pub derivative: f64,
}

/// One positional PID update.
///
/// The integral uses the trapezoid rule; the derivative acts on a moving
/// average of the error. While the output is saturated the integrator is
/// not allowed to move further into saturation.
pub fn pid_step(cfg: &PidConfig, st: &PidState, error: f64, dt: f64) -> Result<(PidState, f64), ServoError> {
    pid_step_terms(cfg, st, error, dt).map(|(s, u, _)| (s, u))
}

pub fn pid_step_terms(
    cfg: &PidConfig,
    st: &PidState,
    error: f64,
    dt: f64,
) -> Result<(PidState, f64, PidTerms), ServoError> {
    if !(dt > 0.0) {
        return Err(ServoError::Invalid(format!("dt must be positive, got {dt}")));
    }
    let mut next = st.clone();

    next.history.push_back(error);
    while next.history.len() > cfg.derivative_smoothing {
        next.history.pop_front();
    }
    let smoothed = next.history.iter().sum::<f64>() / next.history.len() as f64;
    let derivative = match st.prev_smoothed {
        Some(prev) => (smoothed - prev) / dt,
        None => 0.0,
    };
    next.prev_smoothed = Some(smoothed);

    let increment = cfg.ki * 0.5 * (error + st.prev_error.unwrap_or(error)) * dt;
    let p = cfg.kp * error;
    let d = cfg.kd * derivative;
    let mut integrator = st.integrator + increment;
    let unclamped = p + integrator + d + cfg.offset;
    if (unclamped > cfg.output_max && increment > 0.0) || (unclamped < cfg.output_min && increment < 0.0) {
        integrator = st.integrator;
    }
    integrator = integrator.clamp(cfg.output_min - cfg.offset, cfg.output_max - cfg.offset);

    let output = (p + integrator + d + cfg.offset).clamp(cfg.output_min, cfg.output_max);
    next.integrator = integrator;
    next.prev_error = Some(error);
    next.last_output = output;
    Ok((
        next,
        output,
        PidTerms {
            proportional: p,
            integral: integrator,
            derivative: d,
        },
    ))
}
