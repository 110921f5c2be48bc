//! Reading oscilloscope CSV exports and calibrating their time axis to
//! optical detuning with two known features.

use std::path::Path;

use super::HarnessError;
use crate::atomic_data::{FeatureId, LineTable};
use crate::spectrum::{SweepTrace, TraceMeta};

/// Column names to read. Without a differential column it is computed as
/// probe − reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub axis: String,
    pub reference: String,
    pub probe: String,
    pub differential: Option<String>,
}

impl Default for ColumnMap {
    /// The layout written by [`SweepTrace::to_csv`].
    fn default() -> Self {
        Self {
            axis: "detuning_hz".into(),
            reference: "reference_v".into(),
            probe: "probe_v".into(),
            differential: Some("differential_v".into()),
        }
    }
}

/// Two sub-Doppler features, each searched for inside a window given in
/// raw axis units. Feature A is placed at `anchor_hz`, feature B at
/// `anchor_hz + known_separation_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub feature_a: String,
    pub window_a: (f64, f64),
    pub feature_b: String,
    pub window_b: (f64, f64),
    pub anchor_hz: f64,
    pub known_separation_hz: f64,
}

impl Calibration {
    /// Anchor and separation taken from the line table.
    pub fn from_table(
        table: &LineTable,
        a: &FeatureId,
        window_a: (f64, f64),
        b: &FeatureId,
        window_b: (f64, f64),
    ) -> Result<Self, HarnessError> {
        let fa = table.feature(a)?;
        let fb = table.feature(b)?;
        Ok(Self {
            feature_a: a.to_string(),
            window_a,
            feature_b: b.to_string(),
            window_b,
            anchor_hz: fa.detuning_hz,
            known_separation_hz: fb.detuning_hz - fa.detuning_hz,
        })
    }
}

/// Linear map from raw axis units to detuning: `ν = offset + scale · t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisFit {
    pub scale_hz_per_unit: f64,
    pub offset_hz: f64,
    /// Located feature positions in raw axis units.
    pub position_a: f64,
    pub position_b: f64,
}

pub fn ingest_scope_csv(
    path: &Path,
    columns: &ColumnMap,
    calibration: &Calibration,
) -> Result<(SweepTrace, AxisFit), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ingest_scope_text(&text, columns, calibration)
}

pub fn ingest_scope_text(
    text: &str,
    columns: &ColumnMap,
    calibration: &Calibration,
) -> Result<(SweepTrace, AxisFit), HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Ingest(format!("missing column {name:?}")))
    };
    let ia = index(&columns.axis)?;
    let ir = index(&columns.reference)?;
    let ip = index(&columns.probe)?;
    let id = columns.differential.as_deref().map(index).transpose()?;

    let (mut t, mut reference, mut probe, mut diff) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> Result<f64, HarnessError> {
            let raw = record
                .get(i)
                .ok_or_else(|| HarnessError::Ingest(format!("row {}: missing field {i}", row + 1)))?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| HarnessError::Ingest(format!("row {}: bad number {raw:?}", row + 1)))
        };
        let (x, r, p) = (field(ia)?, field(ir)?, field(ip)?);
        if let Some(&last) = t.last() {
            if !(x > last) {
                return Err(HarnessError::NonMonotoneAxis { row: row + 1 });
            }
        }
        t.push(x);
        reference.push(r);
        probe.push(p);
        diff.push(match id {
            Some(i) => field(i)?,
            None => p - r,
        });
    }
    if t.len() < 16 {
        return Err(HarnessError::Ingest(format!("need at least 16 rows, got {}", t.len())));
    }

    let ta = locate_peak(&t, &diff, calibration.window_a)
        .ok_or_else(|| HarnessError::CalibrationFeatureNotFound(calibration.feature_a.clone()))?;
    let tb = locate_peak(&t, &diff, calibration.window_b)
        .ok_or_else(|| HarnessError::CalibrationFeatureNotFound(calibration.feature_b.clone()))?;
    if ta == tb {
        return Err(HarnessError::Ingest("calibration features coincide".into()));
    }
    let scale = calibration.known_separation_hz / (tb - ta);
    let offset = calibration.anchor_hz - scale * ta;
    let mut nu: Vec<f64> = t.iter().map(|&x| offset + scale * x).collect();
    if scale < 0.0 {
        nu.reverse();
        reference.reverse();
        probe.reverse();
        diff.reverse();
    }
    let trace = SweepTrace::new(
        nu,
        reference.iter().map(|v| v.max(0.0)).collect(),
        probe.iter().map(|v| v.max(0.0)).collect(),
        diff,
        TraceMeta {
            samples_per_ramp: t.len(),
            ..TraceMeta::default()
        },
    )?;
    Ok((
        trace,
        AxisFit {
            scale_hz_per_unit: scale,
            offset_hz: offset,
            position_a: ta,
            position_b: tb,
        },
    ))
}

/// Position of the largest sample of `y` inside `window`, refined by a
/// parabola through it and its neighbours. `None` if the maximum sits on
/// the window edge or does not rise above the edges.
fn locate_peak(t: &[f64], y: &[f64], window: (f64, f64)) -> Option<f64> {
    let (lo, hi) = (window.0.min(window.1), window.0.max(window.1));
    let start = t.partition_point(|&v| v < lo);
    let end = t.partition_point(|&v| v <= hi);
    if end < start + 3 {
        return None;
    }
    let i = (start..end).max_by(|&a, &b| y[a].total_cmp(&y[b]))?;
    if i == start || i + 1 == end || !(y[i] > y[start] && y[i] > y[end - 1]) {
        return None;
    }
    let (ym, y0, yp) = (y[i - 1], y[i], y[i + 1]);
    let denom = ym - 2.0 * y0 + yp;
    let shift = if denom < 0.0 {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(if shift >= 0.0 {
        t[i] + shift * (t[i + 1] - t[i])
    } else {
        t[i] + shift * (t[i] - t[i - 1])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal(a: (f64, f64), b: (f64, f64), sep: f64) -> Calibration {
        Calibration {
            feature_a: "a".into(),
            window_a: a,
            feature_b: "b".into(),
            window_b: b,
            anchor_hz: 0.0,
            known_separation_hz: sep,
        }
    }

    fn csv_with_peaks(ts: &[f64], peaks: &[f64], width: f64) -> String {
        let mut s = String::from("# scope export\ntime_s,ch1,ch2\n");
        for &t in ts {
            let d: f64 = peaks
                .iter()
                .map(|p| 0.1 / (1.0 + (2.0 * (t - p) / width).powi(2)))
                .sum();
            s.push_str(&format!("{t},0.5,{}\n", 0.5 + d));
        }
        s
    }

    fn cols() -> ColumnMap {
        ColumnMap {
            axis: "time_s".into(),
            reference: "ch1".into(),
            probe: "ch2".into(),
            differential: None,
        }
    }

    #[test]
    fn parabola_refines_between_samples() {
        let t: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let y: Vec<f64> = t.iter().map(|v| -(v - 40.3f64).powi(2)).collect();
        assert!((locate_peak(&t, &y, (20.0, 60.0)).unwrap() - 40.3).abs() < 1e-9);
        assert!(locate_peak(&t, &y, (45.0, 60.0)).is_none());
    }

    #[test]
    fn reversed_sweep_direction() {
        let ts: Vec<f64> = (0..2000).map(|i| i as f64 * 1e-6).collect();
        let text = csv_with_peaks(&ts, &[0.5e-3, 1.5e-3], 2e-5);
        // feature A is the later one, so detuning falls with time
        let c = cal((1.4e-3, 1.6e-3), (0.4e-3, 0.6e-3), 1e9);
        let (tr, fit) = ingest_scope_text(&text, &cols(), &c).unwrap();
        assert!(fit.scale_hz_per_unit < 0.0);
        assert!(tr.detuning_hz.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn missing_column_and_bad_rows() {
        let ts: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let text = csv_with_peaks(&ts, &[30.0, 60.0], 3.0);
        let mut c = cols();
        c.probe = "ch9".into();
        assert!(ingest_scope_text(&text, &c, &cal((20.0, 40.0), (50.0, 70.0), 1.0)).is_err());
        let broken = text.replace("\n5,", "\nfive,");
        assert!(ingest_scope_text(&broken, &cols(), &cal((20.0, 40.0), (50.0, 70.0), 1.0)).is_err());
    }

    #[test]
    fn feature_absent_from_window() {
        let ts: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let text = csv_with_peaks(&ts, &[30.0], 3.0);
        assert!(matches!(
            ingest_scope_text(&text, &cols(), &cal((20.0, 40.0), (50.0, 70.0), 1.0)),
            Err(HarnessError::CalibrationFeatureNotFound(_))
        ));
    }
}
