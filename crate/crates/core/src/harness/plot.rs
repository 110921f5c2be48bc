//! Dependency-free SVG line plots. Output is a pure function of the input.

use std::fmt::Write as _;
use std::path::Path;

use super::HarnessError;
use crate::servo::TimeSeriesLog;
use crate::spectrum::SweepTrace;

const WIDTH: f64 = 960.0;
const PANEL_HEIGHT: f64 = 280.0;
const MARGIN_LEFT: f64 = 90.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
/// Above this many points a series is reduced to per-column min/max pairs.
const MAX_POINTS: usize = 2400;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    /// Stacked top to bottom, sharing the x axis.
    pub panels: Vec<Panel>,
    /// Vertical marker lines (x position, label).
    pub annotations: Vec<(f64, String)>,
}

impl Figure {
    /// Reference, probe and differential overlaid against detuning in MHz.
    pub fn from_trace(trace: &SweepTrace, title: &str, annotations: &[(f64, String)]) -> Self {
        let x: Vec<f64> = trace.detuning_hz.iter().map(|v| v * 1e-6).collect();
        let series = [
            ("reference", &trace.reference),
            ("probe", &trace.probe),
            ("differential", &trace.differential),
        ]
        .into_iter()
        .map(|(name, y)| Series {
            name: name.to_string(),
            x: x.clone(),
            y: y.clone(),
        })
        .collect();
        Self {
            title: title.to_string(),
            x_label: "detuning (MHz)".to_string(),
            panels: vec![Panel {
                y_label: "signal (V)".to_string(),
                series,
            }],
            annotations: annotations.iter().map(|(x, l)| (x * 1e-6, l.clone())).collect(),
        }
    }

    /// Error signal and control voltage in two panels against time.
    pub fn from_log(log: &TimeSeriesLog, title: &str) -> Self {
        let t: Vec<f64> = log.samples.iter().map(|s| s.t).collect();
        let panel = |label: &str, name: &str, y: Vec<f64>| Panel {
            y_label: label.to_string(),
            series: vec![Series {
                name: name.to_string(),
                x: t.clone(),
                y,
            }],
        };
        let mut annotations = Vec::new();
        for w in log.samples.windows(2) {
            if w[0].phase != w[1].phase {
                annotations.push((w[1].t, w[1].phase.to_string()));
            }
        }
        Self {
            title: title.to_string(),
            x_label: "time (s)".to_string(),
            panels: vec![
                panel("error (V)", "error", log.samples.iter().map(|s| s.error).collect()),
                panel(
                    "control (V)",
                    "control",
                    log.samples.iter().map(|s| s.control).collect(),
                ),
            ],
            annotations,
        }
    }

    pub fn polyline_count(&self) -> usize {
        self.panels.iter().map(|p| p.series.len()).sum()
    }

    pub fn render_svg(&self) -> Result<String, HarnessError> {
        if self.panels.is_empty() || self.panels.iter().any(|p| p.series.is_empty()) {
            return Err(HarnessError::Plot("figure has no data".into()));
        }
        let mut x_range = Range::empty();
        for s in self.panels.iter().flat_map(|p| &p.series) {
            if s.x.len() != s.y.len() {
                return Err(HarnessError::Plot(format!(
                    "series {:?} has mismatched lengths",
                    s.name
                )));
            }
            for (&x, &y) in s.x.iter().zip(&s.y) {
                if x.is_finite() && y.is_finite() {
                    x_range.include(x);
                }
            }
        }
        if x_range.is_empty() {
            return Err(HarnessError::Plot("figure has no finite points".into()));
        }
        let x_range = x_range.padded();

        let height = MARGIN_TOP + self.panels.len() as f64 * (PANEL_HEIGHT + MARGIN_BOTTOM);
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );

        let mut color = 0;
        for (k, panel) in self.panels.iter().enumerate() {
            let top = MARGIN_TOP + k as f64 * (PANEL_HEIGHT + MARGIN_BOTTOM);
            let mut y_range = Range::empty();
            for s in &panel.series {
                for (&x, &y) in s.x.iter().zip(&s.y) {
                    if x.is_finite() && y.is_finite() {
                        y_range.include(y);
                    }
                }
            }
            if y_range.is_empty() {
                return Err(HarnessError::Plot(format!(
                    "panel {:?} has no finite points",
                    panel.y_label
                )));
            }
            let y_range = y_range.padded();
            let px = |x: f64| MARGIN_LEFT + (x - x_range.lo) / (x_range.hi - x_range.lo) * plot_w;
            let py = |y: f64| top + PANEL_HEIGHT - (y - y_range.lo) / (y_range.hi - y_range.lo) * PANEL_HEIGHT;

            let _ = writeln!(
                svg,
                r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
            );
            for i in 0..=4 {
                let xv = x_range.lo + (x_range.hi - x_range.lo) * i as f64 / 4.0;
                let yv = y_range.lo + (y_range.hi - y_range.lo) * i as f64 / 4.0;
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    px(xv),
                    top + PANEL_HEIGHT + 16.0,
                    tick(xv)
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                    MARGIN_LEFT - 6.0,
                    py(yv) + 4.0,
                    tick(yv)
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                MARGIN_LEFT + plot_w / 2.0,
                top + PANEL_HEIGHT + 36.0,
                escape(&self.x_label)
            );
            let _ = writeln!(
                svg,
                r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
                top + PANEL_HEIGHT / 2.0,
                top + PANEL_HEIGHT / 2.0,
                escape(&panel.y_label)
            );

            for (x, label) in &self.annotations {
                if *x < x_range.lo || *x > x_range.hi {
                    continue;
                }
                let _ = writeln!(
                    svg,
                    r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                    px(*x),
                    top,
                    top + PANEL_HEIGHT
                );
                if k == 0 {
                    let _ = writeln!(
                        svg,
                        r#"<text x="{:.2}" y="{:.2}" font-size="10" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
                        px(*x) - 3.0,
                        top + 6.0,
                        px(*x) - 3.0,
                        top + 6.0,
                        escape(label)
                    );
                }
            }

            for (j, s) in panel.series.iter().enumerate() {
                let c = COLORS[color % COLORS.len()];
                color += 1;
                let mut points = String::new();
                for (x, y) in reduce(s) {
                    let _ = write!(points, "{:.2},{:.2} ", px(x), py(y));
                }
                let _ = writeln!(
                    svg,
                    r#"<polyline data-series="{}" fill="none" stroke="{c}" stroke-width="1" points="{}"/>"#,
                    escape(&s.name),
                    points.trim_end()
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{:.2}" fill="{c}">{}</text>"#,
                    MARGIN_LEFT + plot_w - 110.0,
                    top + 16.0 + 14.0 * j as f64,
                    escape(&s.name)
                );
            }
        }
        svg.push_str("</svg>\n");
        Ok(svg)
    }
}

/// Renders `figure` and writes it to `path`.
pub fn emit_plot(figure: &Figure, path: &Path) -> Result<(), HarnessError> {
    let svg = figure.render_svg()?;
    std::fs::write(path, svg).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn empty() -> Self {
        Self {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    fn include(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }

    fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    fn padded(self) -> Self {
        let span = self.hi - self.lo;
        let pad = if span > 0.0 {
            0.04 * span
        } else {
            self.lo.abs().max(1.0) * 0.5
        };
        Self {
            lo: self.lo - pad,
            hi: self.hi + pad,
        }
    }
}

/// Finite points, thinned to min/max pairs per bucket when there are many.
fn reduce(s: &Series) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> =
        s.x.iter()
            .zip(&s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| (*x, *y))
            .collect();
    if pts.len() <= MAX_POINTS {
        return pts;
    }
    let buckets = MAX_POINTS / 2;
    let per = pts.len().div_ceil(buckets);
    let mut out = Vec::with_capacity(MAX_POINTS);
    for chunk in pts.chunks(per) {
        let (imin, _) = chunk
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, p)| if p.1 < b.1 { (i, p.1) } else { b });
        let (imax, _) = chunk
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, p)| if p.1 > b.1 { (i, p.1) } else { b });
        let (a, b) = if imin <= imax { (imin, imax) } else { (imax, imin) };
        out.push(chunk[a]);
        if b != a {
            out.push(chunk[b]);
        }
    }
    out
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig(n: usize) -> Figure {
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.01).sin()).collect();
        Figure {
            title: "t <1>".into(),
            x_label: "x".into(),
            panels: vec![Panel {
                y_label: "y".into(),
                series: vec![Series { name: "s".into(), x, y }],
            }],
            annotations: vec![(10.0, "a&b".into())],
        }
    }

    #[test]
    fn deterministic_and_escaped() {
        let a = fig(5000).render_svg().unwrap();
        assert_eq!(a, fig(5000).render_svg().unwrap());
        assert!(a.contains("t &lt;1&gt;") && a.contains("a&amp;b"));
        assert_eq!(a.matches("<polyline").count(), 1);
    }

    #[test]
    fn reduction_keeps_extremes() {
        let f = fig(100_000);
        let pts = reduce(&f.panels[0].series[0]);
        assert!(pts.len() <= MAX_POINTS);
        let max = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
        assert!((max - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_is_error() {
        assert!(fig(0).render_svg().is_err());
        let mut f = fig(3);
        f.panels.clear();
        assert!(f.render_svg().is_err());
    }
}
