//! Depth markers A/B/C/D and the three depth ratios.
//!
//! - A: median probe level outside every Doppler window
//! - B: floor of the Doppler valley, taken on a moving-median probe whose
//!   window is wide compared with a dip and narrow compared with ΔνD
//! - C: the weakest selected hyperfine feature, placed below B by its height
//!   above the median baseline, so `(B − C)/A` is that feature's contrast
//! - D: probe level at the selected crossover extremum

use serde::{Deserialize, Serialize};

use super::signal::{median, moving_median};
use super::synth::SpectrumModel;
use super::{SpectrumError, SweepTrace};
use crate::atomic_data::{IsotopeKind, LineTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMarkers {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Percentages: `(A−B)/A`, `(B−C)/A`, `(D−B)/A`, each ×100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub doppler_depth: f64,
    pub hyperfine_depth: f64,
    pub crossover_depth: f64,
}

/// Which features the markers are read from, and where the baseline lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSelection {
    /// (label, detuning) of the candidate hyperfine features for C.
    pub hyperfine: Vec<(String, f64)>,
    /// (label, detuning) of the crossover feature for D.
    pub crossover: (String, f64),
    /// Regions excluded from the baseline A.
    pub exclusion_windows: Vec<(f64, f64)>,
    /// Half-width of the search around each nominal feature position.
    pub search_halfwidth_hz: f64,
    /// Moving-median window used for B.
    pub baseline_window_hz: f64,
}

impl MarkerSelection {
    /// Selection for one manifold of `table`, with Doppler exclusion windows
    /// of ±1.5 ΔνD around every manifold and a baseline window of eight
    /// broadened dip widths.
    pub fn for_manifold(
        table: &LineTable,
        model: &SpectrumModel,
        isotope: IsotopeKind,
        f_ground: u8,
        hyperfine: &[&str],
        crossover: &str,
    ) -> Result<(Self, (f64, f64)), SpectrumError> {
        let features: Vec<_> = model
            .features()
            .iter()
            .filter(|f| f.isotope == isotope && f.f_ground == f_ground)
            .collect();
        let find = |label: &str| {
            features
                .iter()
                .find(|f| f.label == label)
                .map(|f| (label.to_string(), f.profile.nu0))
                .ok_or_else(|| SpectrumError::NoSubDopplerFeatures(format!("{isotope} F={f_ground} {label}")))
        };
        let hyperfine = hyperfine.iter().map(|l| find(l)).collect::<Result<Vec<_>, _>>()?;
        let crossover = find(crossover)?;
        let dip_fwhm = features.iter().map(|f| f.profile.gamma_fwhm).fold(0.0, f64::max);
        let windows = model.doppler_windows(1.5);
        let doppler = model
            .doppler_fwhm(isotope, f_ground)
            .ok_or(SpectrumError::BadWindow(0.0, 0.0))?;
        let lines = table.transitions(isotope, f_ground)?;
        let manifold_window = (
            lines[0].detuning_hz - doppler,
            lines[lines.len() - 1].detuning_hz + doppler,
        );
        Ok((
            Self {
                hyperfine,
                crossover,
                exclusion_windows: windows.into_iter().map(|(_, _, lo, hi)| (lo, hi)).collect(),
                search_halfwidth_hz: dip_fwhm,
                baseline_window_hz: 8.0 * dip_fwhm,
            },
            manifold_window,
        ))
    }
}

pub fn extract_markers(
    trace: &SweepTrace,
    manifold_window: (f64, f64),
    selection: &MarkerSelection,
) -> Result<DepthMarkers, SpectrumError> {
    let (lo, hi) = manifold_window;
    let (t0, t1) = trace.span();
    let bad = || SpectrumError::BadWindow(lo, hi);
    if !(lo < hi) || lo < t0 || hi > t1 {
        return Err(bad());
    }
    let inside = |x: f64| x >= lo && x <= hi;
    if !selection.hyperfine.iter().all(|(_, x)| inside(*x)) || !inside(selection.crossover.1) {
        return Err(bad());
    }
    if selection.hyperfine.is_empty() {
        return Err(SpectrumError::NoSubDopplerFeatures("empty hyperfine selection".into()));
    }

    let outside: Vec<f64> = trace
        .detuning_hz
        .iter()
        .zip(&trace.probe)
        .filter(|(x, _)| !selection.exclusion_windows.iter().any(|&(a, b)| **x >= a && **x <= b))
        .map(|(_, p)| *p)
        .collect();
    if outside.is_empty() {
        return Err(SpectrumError::NoBaseline);
    }
    let a = median(&outside);

    let step = trace.step_hz();
    let window = ((selection.baseline_window_hz / step).round() as usize) | 1;
    let smooth = moving_median(&trace.probe, window.max(3));
    let range = trace.index_range(lo, hi);
    if range.is_empty() {
        return Err(bad());
    }
    let b = smooth[range.clone()].iter().cloned().fold(f64::INFINITY, f64::min);

    let residual: Vec<f64> = trace.probe.iter().zip(&smooth).map(|(p, s)| p - s).collect();
    // robust noise scale of the residual
    let mut dev: Vec<f64> = residual.iter().map(|r| r.abs()).collect();
    dev.sort_by(f64::total_cmp);
    let sigma = 1.4826 * dev[dev.len() / 2];
    let threshold = (6.0 * sigma).max(1e-6 * a.abs());

    let locate = |label: &str, x: f64| -> Result<(usize, f64), SpectrumError> {
        let r = trace.index_range(x - selection.search_halfwidth_hz, x + selection.search_halfwidth_hz);
        let r = if r.is_empty() {
            let i = trace.nearest_index(x);
            i..i + 1
        } else {
            r
        };
        let i = r
            .max_by(|&p, &q| residual[p].total_cmp(&residual[q]))
            .expect("non-empty range");
        if residual[i] > threshold {
            Ok((i, residual[i]))
        } else {
            Err(SpectrumError::NoSubDopplerFeatures(label.to_string()))
        }
    };

    let mut weakest = f64::INFINITY;
    for (label, x) in &selection.hyperfine {
        let (_, h) = locate(label, *x)?;
        weakest = weakest.min(h);
    }
    let (ci, _) = locate(&selection.crossover.0, selection.crossover.1)?;

    Ok(DepthMarkers {
        a,
        b,
        c: b - weakest,
        d: trace.probe[ci],
    })
}

pub fn depth_metrics(m: &DepthMarkers) -> Result<DepthMetrics, SpectrumError> {
    if m.a == 0.0 {
        return Err(SpectrumError::ZeroBaseline);
    }
    Ok(DepthMetrics {
        doppler_depth: 100.0 * (m.a - m.b) / m.a,
        hyperfine_depth: 100.0 * (m.b - m.c) / m.a,
        crossover_depth: 100.0 * (m.d - m.b) / m.a,
    })
}
