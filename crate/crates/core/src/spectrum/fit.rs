//! Levenberg–Marquardt fit of a single peak plus constant offset.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::signal::median;
use super::SpectrumError;

const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitModel {
    Lorentzian,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub amplitude: f64,
    pub center_hz: f64,
    /// FWHM in Hz.
    pub width_hz: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    pub rms_residual: f64,
    pub iterations: usize,
}

// Works in normalised units: u = (x − x_mid) / span, v = y / y_scale.
fn shape(model: FitModel, u: f64, c: f64, w: f64) -> (f64, f64, f64) {
    // returns (value, d/dc, d/dw)
    let z = 2.0 * (u - c) / w;
    match model {
        FitModel::Lorentzian => {
            let l = 1.0 / (1.0 + z * z);
            let dl_dz = -2.0 * z * l * l;
            (l, dl_dz * (-2.0 / w), dl_dz * (-z / w))
        }
        FitModel::Gaussian => {
            let g = (-std::f64::consts::LN_2 * z * z).exp();
            let dg_dz = -2.0 * std::f64::consts::LN_2 * z * g;
            (g, dg_dz * (-2.0 / w), dg_dz * (-z / w))
        }
    }
}

fn cost(model: FitModel, u: &[f64], v: &[f64], p: &Vector4<f64>) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&ui, &vi)| {
            let r = p[0] * shape(model, ui, p[1], p[2]).0 + p[3] - vi;
            r * r
        })
        .sum()
}

/// Fits `amplitude · shape((x − center)/width) + offset`.
///
/// Starts from centre = sample of largest deviation from the edge level and
/// width = half the segment span.
pub fn fit_lineshape(x: &[f64], y: &[f64], model: FitModel) -> Result<FitResult, SpectrumError> {
    let n = x.len();
    if n < 8 || y.len() != n {
        return Err(SpectrumError::TooFewSamples(n.min(y.len())));
    }
    let (x0, x1) = (x[0], x[n - 1]);
    let span = x1 - x0;
    if !(span > 0.0) {
        return Err(SpectrumError::InvalidTrace("fit segment has zero span".into()));
    }
    let mid = 0.5 * (x0 + x1);
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let u: Vec<f64> = x.iter().map(|&xi| (xi - mid) / span).collect();
    let v: Vec<f64> = y.iter().map(|&yi| yi / y_scale).collect();

    let edge = (n / 10).max(1);
    let edges: Vec<f64> = v[..edge].iter().chain(&v[n - edge..]).cloned().collect();
    let offset0 = median(&edges);
    let ext = (0..n)
        .max_by(|&a, &b| (v[a] - offset0).abs().total_cmp(&(v[b] - offset0).abs()))
        .unwrap();
    let mut p = Vector4::new(v[ext] - offset0, u[ext], 0.5, offset0);

    let mut c = cost(model, &u, &v, &p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut stalled = 0;
    let converged = loop {
        if c <= 1e-28 * n as f64 {
            break true;
        }
        if iterations >= MAX_ITERATIONS {
            break false;
        }
        iterations += 1;

        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&ui, &vi) in u.iter().zip(&v) {
            let (s, ds_dc, ds_dw) = shape(model, ui, p[1], p[2]);
            let r = p[0] * s + p[3] - vi;
            let j = Vector4::new(s, p[0] * ds_dc, p[0] * ds_dw, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let diag_floor = 1e-12 * jtj.diagonal().max();

        let mut improved = false;
        let prev = c;
        for _ in 0..40 {
            let mut a = jtj;
            for k in 0..4 {
                a[(k, k)] += lambda * (jtj[(k, k)] + diag_floor);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p + step;
            trial[2] = trial[2].abs().max(1e-12);
            let tc = cost(model, &u, &v, &trial);
            if tc.is_finite() && tc <= c {
                p = trial;
                c = tc;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 2.0;
        }
        if !improved {
            // no descent direction left: at a minimum to machine precision
            break true;
        }
        if prev - c <= 1e-13 * prev {
            stalled += 1;
            if stalled >= 3 {
                break true;
            }
        } else {
            stalled = 0;
        }
    };

    let rms = (c / n as f64).sqrt() * y_scale;
    if !converged {
        return Err(SpectrumError::NoConvergence { iterations, rms });
    }
    Ok(FitResult {
        params: FitParams {
            amplitude: p[0] * y_scale,
            center_hz: mid + p[1] * span,
            width_hz: p[2] * span,
            offset: p[3] * y_scale,
        },
        rms_residual: rms,
        iterations,
    })
}
