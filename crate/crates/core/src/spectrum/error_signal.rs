use serde::{Deserialize, Serialize};

use super::signal::moving_average;
use super::{SpectrumError, SweepTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorMode {
    /// The raw probe − reference channel.
    Differential,
    /// d(differential)/d(detuning) in V/MHz after moving-average smoothing.
    Derivative,
}

impl std::str::FromStr for ErrorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "differential" => Ok(ErrorMode::Differential),
            "derivative" => Ok(ErrorMode::Derivative),
            other => Err(format!("unknown error mode {other:?}")),
        }
    }
}

impl std::fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorMode::Differential => "differential",
            ErrorMode::Derivative => "derivative",
        })
    }
}

/// Conditioned error signal, same length as the trace.
pub fn error_signal(trace: &SweepTrace, mode: ErrorMode, smoothing_window: usize) -> Result<Vec<f64>, SpectrumError> {
    let n = trace.len();
    if smoothing_window == 0 || smoothing_window.is_multiple_of(2) || smoothing_window >= n {
        return Err(SpectrumError::InvalidWindow(smoothing_window));
    }
    match mode {
        ErrorMode::Differential => Ok(trace.differential.clone()),
        ErrorMode::Derivative => {
            let s = moving_average(&trace.differential, smoothing_window);
            let x = &trace.detuning_hz;
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                d[i] = 1e6 * (s[i + 1] - s[i - 1]) / (x[i + 1] - x[i - 1]);
            }
            d[0] = d[1];
            d[n - 1] = d[n - 2];
            Ok(d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::TraceMeta;

    fn dip_trace(center: f64, values: impl Fn(f64) -> f64) -> SweepTrace {
        let x: Vec<f64> = (0..801).map(|i| center - 40e6 + i as f64 * 0.1e6).collect();
        let diff: Vec<f64> = x.iter().map(|&v| values(v - center)).collect();
        let z = vec![0.0; x.len()];
        SweepTrace::new(x, z.clone(), z, diff, TraceMeta::default()).unwrap()
    }

    #[test]
    fn differential_is_identity() {
        let tr = dip_trace(0.0, |d| (-(d / 3e6).powi(2)).exp());
        assert_eq!(error_signal(&tr, ErrorMode::Differential, 1).unwrap(), tr.differential);
    }

    #[test]
    fn derivative_of_symmetric_feature_is_odd() {
        let c = 12.34e6;
        let tr = dip_trace(c, |d| 0.2 / (1.0 + (2.0 * d / 10e6).powi(2)));
        let e = error_signal(&tr, ErrorMode::Derivative, 5).unwrap();
        let i0 = tr.nearest_index(c);
        let crossing = (1..e.len()).find(|&i| e[i - 1] > 0.0 && e[i] <= 0.0).unwrap();
        assert!((crossing as isize - i0 as isize).abs() <= 1);
        for k in 1..300 {
            assert!((e[i0 - k] + e[i0 + k]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let tr = dip_trace(0.0, |_| 0.0);
        assert!(error_signal(&tr, ErrorMode::Derivative, 7)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_windows() {
        let tr = dip_trace(0.0, |_| 0.0);
        for w in [0, 4, 801, 1001] {
            assert!(matches!(
                error_signal(&tr, ErrorMode::Derivative, w),
                Err(SpectrumError::InvalidWindow(_))
            ));
        }
    }
}
