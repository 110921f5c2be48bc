//! Closed-form line profiles.
//!
//! The Lorentzian is peak-normalized (unitless, maximum 1); the Doppler
//! Gaussian is an area-normalized density per Hz. Amplitude scaling is the
//! caller's job.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LineshapeError {
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("saturation parameter must be non-negative, got {0}")]
    NegativeSaturation(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// J/K
    pub boltzmann: f64,
    /// m/s
    pub speed_of_light: f64,
}

/// CODATA 2018 exact values.
pub const CODATA: PhysicalConstants = PhysicalConstants {
    boltzmann: 1.380_649e-23,
    speed_of_light: 299_792_458.0,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    pub nu0: f64,
    pub gamma_fwhm: f64,
}

impl LorentzianParams {
    pub fn new(nu0: f64, gamma_fwhm: f64) -> Result<Self, LineshapeError> {
        if !(gamma_fwhm > 0.0) {
            return Err(LineshapeError::NonPositive("gamma_fwhm", gamma_fwhm));
        }
        Ok(Self { nu0, gamma_fwhm })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub nu0: f64,
    pub fwhm: f64,
}

impl GaussianParams {
    pub fn new(nu0: f64, fwhm: f64) -> Result<Self, LineshapeError> {
        if !(fwhm > 0.0) {
            return Err(LineshapeError::NonPositive("fwhm", fwhm));
        }
        Ok(Self { nu0, fwhm })
    }
}

/// `1 / (1 + 4 (ν − ν₀)² / Γ²)`
pub fn lorentzian(nu: f64, p: &LorentzianParams) -> f64 {
    let x = 2.0 * (nu - p.nu0) / p.gamma_fwhm;
    1.0 / (1.0 + x * x)
}

/// Doppler-broadened Gaussian density, unit area over ν.
pub fn doppler_gaussian(nu: f64, p: &GaussianParams) -> f64 {
    let k = 2.0 * LN_2.sqrt() / p.fwhm;
    let x = k * (nu - p.nu0);
    k / PI.sqrt() * (-x * x).exp()
}

/// Peak-normalized Gaussian with FWHM `fwhm`, used for envelopes.
pub fn gaussian_unit_peak(nu: f64, nu0: f64, fwhm: f64) -> f64 {
    let x = 2.0 * (nu - nu0) / fwhm;
    (-LN_2 * x * x).exp()
}

/// Doppler FWHM `2 √(2 k_B T ln2 / (m c²)) ν₀`.
pub fn doppler_fwhm(
    temperature_k: f64,
    mass_kg: f64,
    nu0_abs_hz: f64,
    c: &PhysicalConstants,
) -> Result<f64, LineshapeError> {
    if !(temperature_k > 0.0) {
        return Err(LineshapeError::NonPositive("temperature", temperature_k));
    }
    if !(mass_kg > 0.0) {
        return Err(LineshapeError::NonPositive("mass", mass_kg));
    }
    if !(nu0_abs_hz > 0.0) {
        return Err(LineshapeError::NonPositive("nu0", nu0_abs_hz));
    }
    let ratio = 2.0 * c.boltzmann * temperature_k * LN_2 / (mass_kg * c.speed_of_light.powi(2));
    Ok(2.0 * ratio.sqrt() * nu0_abs_hz)
}

/// Power-broadened width `Γ √(1 + s)`.
pub fn saturation_broadened_width(gamma_fwhm: f64, s: f64) -> Result<f64, LineshapeError> {
    if !(gamma_fwhm > 0.0) {
        return Err(LineshapeError::NonPositive("gamma_fwhm", gamma_fwhm));
    }
    if !(s >= 0.0) {
        return Err(LineshapeError::NegativeSaturation(s));
    }
    Ok(gamma_fwhm * (1.0 + s).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Half-max crossing on the right of the peak by bisection.
    fn right_half_max(f: impl Fn(f64) -> f64, center: f64, hi: f64) -> f64 {
        let half = 0.5 * f(center);
        let (mut a, mut b) = (center, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(m) > half {
                a = m
            } else {
                b = m
            }
        }
        0.5 * (a + b)
    }

    /// Adaptive Simpson, used as an independent integration oracle.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn lorentzian_values() {
        let p = LorentzianParams::new(3.0e6, 6.0e6).unwrap();
        assert_eq!(lorentzian(3.0e6, &p), 1.0);
        assert!((lorentzian(6.0e6, &p) - 0.5).abs() < 1e-15);
        assert!((lorentzian(9.0e6, &p) - 0.2).abs() < 1e-15);
        assert!(LorentzianParams::new(0.0, 0.0).is_err());
    }

    #[test]
    fn lorentzian_numerical_fwhm() {
        let p = LorentzianParams::new(1.0e6, 6.0666e6).unwrap();
        let r = right_half_max(|x| lorentzian(x, &p), p.nu0, p.nu0 + 100.0 * p.gamma_fwhm);
        let fwhm = 2.0 * (r - p.nu0);
        assert!((fwhm / p.gamma_fwhm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_values() {
        let p = GaussianParams::new(0.0, 1.0).unwrap();
        let center = doppler_gaussian(0.0, &p);
        assert!((center - 2.0 * (LN_2 / PI).sqrt()).abs() < 1e-15);
        assert!((center - 0.93944).abs() < 1e-5);
        assert!((doppler_gaussian(0.5, &p) / center - 0.5).abs() < 1e-14);
        for d in [0.1, 0.37, 2.0] {
            assert_eq!(doppler_gaussian(d, &p), doppler_gaussian(-d, &p));
        }
    }

    #[test]
    fn gaussian_integrates_to_one() {
        let p = GaussianParams::new(2.0e8, 5.22e8).unwrap();
        let f = |x: f64| doppler_gaussian(x, &p);
        let area = simpson(&f, p.nu0 - 10.0 * p.fwhm, p.nu0 + 10.0 * p.fwhm, 1e-12);
        assert!((area - 1.0).abs() < 1e-6, "{area}");
    }

    #[test]
    fn gaussian_numerical_fwhm() {
        let p = GaussianParams::new(-4.0e7, 5.22e8).unwrap();
        let r = right_half_max(|x| doppler_gaussian(x, &p), p.nu0, p.nu0 + 10.0 * p.fwhm);
        let fwhm = 2.0 * (r - p.nu0);
        assert!((fwhm / p.fwhm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn doppler_width_scaling() {
        let m = 1.443160648e-25;
        let w = doppler_fwhm(312.65, m, 384.230e12, &CODATA).unwrap();
        let w4 = doppler_fwhm(4.0 * 312.65, m, 384.230e12, &CODATA).unwrap();
        assert!((w4 / w - 2.0).abs() < 1e-12);
        assert!(doppler_fwhm(1e-30, m, 384.230e12, &CODATA).unwrap() < 1.0);
        assert!(doppler_fwhm(0.0, m, 1.0, &CODATA).is_err());
        assert!(doppler_fwhm(300.0, -1.0, 1.0, &CODATA).is_err());
    }

    #[test]
    fn saturation_width() {
        assert_eq!(saturation_broadened_width(6e6, 0.0).unwrap(), 6e6);
        assert_eq!(saturation_broadened_width(6e6, 3.0).unwrap(), 12e6);
        let w = saturation_broadened_width(6e6, 1.0).unwrap();
        assert!((w - 8.485e6).abs() < 1e3);
        assert!(saturation_broadened_width(6e6, -0.1).is_err());
    }

    #[test]
    fn monotone_in_distance() {
        let l = LorentzianParams::new(0.0, 1.0).unwrap();
        let g = GaussianParams::new(0.0, 1.0).unwrap();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for i in 0..400 {
            let x = i as f64 * 0.01;
            let cur = (lorentzian(x, &l), doppler_gaussian(-x, &g));
            assert!(cur.0 < prev.0 && cur.1 < prev.1);
            prev = cur;
        }
    }
}
