//! Rubidium D2 line data: isotopes, hyperfine transitions and derived
//! crossover resonances.
//!
//! Optical frequencies are stored as detunings in Hz from a carrier
//! (the ⁸⁷Rb F=2 → F'=3 line in the bundled table). The absolute carrier
//! frequency only lives in [`LineTable::carrier_hz`].
//!
//! The on-disk format (`rb-lines/1`) is a plain-text table:
//!
//! ```text
//! format=rb-lines/1
//! # comment
//! source=<free text>
//! carrier_hz=<f64>
//! gamma_natural_hz=<f64>
//! isotope, abundance, mass_kg, f_ground, f_excited_label, detuning_hz, strength, gamma_natural_hz
//! ```
//!
//! Records must be sorted by ascending detuning. A record's
//! `gamma_natural_hz` may be the literal `default`, which resolves to the
//! table-wide value.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_TAG: &str = "rb-lines/1";

const BUNDLED: &str = include_str!("../data/rb_d2_lines.txt");

#[derive(Debug, Error)]
pub enum AtomicDataError {
    #[error("cannot read line data {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported line-data format {0:?} (expected {FORMAT_TAG})")]
    UnknownFormat(String),
    #[error("isotope abundances sum to {0}, expected 1")]
    AbundanceSum(f64),
    #[error("line {line}: records are not sorted by ascending detuning")]
    Unsorted { line: usize },
    #[error("line {line}: duplicate transition")]
    Duplicate { line: usize },
    #[error("no manifold {isotope} F={f_ground} in table")]
    UnknownManifold { isotope: IsotopeKind, f_ground: u8 },
    #[error("lines belong to more than one ground-state manifold")]
    MixedManifolds,
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("invalid line table: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, AtomicDataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IsotopeKind {
    Rb85,
    Rb87,
}

impl fmt::Display for IsotopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IsotopeKind::Rb85 => f.write_str("Rb85"),
            IsotopeKind::Rb87 => f.write_str("Rb87"),
        }
    }
}

impl FromStr for IsotopeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "Rb85" | "85Rb" | "rb85" => Ok(IsotopeKind::Rb85),
            "Rb87" | "87Rb" | "rb87" => Ok(IsotopeKind::Rb87),
            other => Err(format!("unknown isotope {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isotope {
    pub kind: IsotopeKind,
    /// Natural abundance, fraction in [0, 1].
    pub abundance: f64,
    pub mass_kg: f64,
}

/// One hyperfine transition or crossover resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionLine {
    pub isotope: IsotopeKind,
    pub f_ground: u8,
    /// `F'=3` for direct lines, `co(2,3)` for crossovers.
    pub f_excited_label: String,
    pub detuning_hz: f64,
    pub strength: f64,
    /// Natural FWHM Γ in Hz.
    pub gamma_natural_hz: f64,
    pub is_crossover: bool,
}

impl TransitionLine {
    pub fn id(&self) -> FeatureId {
        FeatureId {
            isotope: self.isotope,
            f_ground: self.f_ground,
            label: self.f_excited_label.clone(),
        }
    }

    fn same_manifold(&self, other: &TransitionLine) -> bool {
        self.isotope == other.isotope && self.f_ground == other.f_ground
    }
}

/// Names a spectral feature: `Rb87 F=2 co(2,3)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureId {
    pub isotope: IsotopeKind,
    pub f_ground: u8,
    pub label: String,
}

impl FeatureId {
    pub fn new(isotope: IsotopeKind, f_ground: u8, label: impl Into<String>) -> Self {
        Self {
            isotope,
            f_ground,
            label: label.into(),
        }
    }

    pub fn is_crossover(&self) -> bool {
        self.label.starts_with("co(")
    }

    /// Default pump feature, the ⁸⁷Rb F=2 → F'=2,3 crossover.
    pub fn default_pump() -> Self {
        Self::new(IsotopeKind::Rb87, 2, "co(2,3)")
    }

    /// Default repump feature, the ⁸⁷Rb F=1 → F'=1,2 crossover.
    pub fn default_repump() -> Self {
        Self::new(IsotopeKind::Rb87, 1, "co(1,2)")
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} F={} {}", self.isotope, self.f_ground, self.label)
    }
}

impl FromStr for FeatureId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(format!("feature {s:?} must look like `Rb87 F=2 co(2,3)`"));
        }
        let isotope = parts[0].parse()?;
        let f_ground = parts[1]
            .strip_prefix("F=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("bad ground level {:?}", parts[1]))?;
        Ok(Self::new(isotope, f_ground, parts[2]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineTable {
    /// Absolute optical frequency the detunings refer to.
    pub carrier_hz: f64,
    /// Table-wide natural linewidth used by records marked `default`.
    pub default_gamma_hz: f64,
    pub isotopes: Vec<Isotope>,
    /// Direct transitions, ascending in detuning.
    pub lines: Vec<TransitionLine>,
    pub source_note: String,
}

impl LineTable {
    /// The line table shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled line table is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AtomicDataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut format_seen = false;
        let mut carrier_hz = None;
        let mut default_gamma = None;
        let mut source_note = String::new();
        let mut isotopes: Vec<Isotope> = Vec::new();
        // (line number, raw gamma field, record)
        let mut records: Vec<(usize, Option<f64>, TransitionLine)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !format_seen {
                match line.strip_prefix("format=") {
                    Some(tag) if tag.trim() == FORMAT_TAG => {
                        format_seen = true;
                        continue;
                    }
                    Some(tag) => return Err(AtomicDataError::UnknownFormat(tag.trim().into())),
                    None => {
                        return Err(AtomicDataError::Parse {
                            line: lineno,
                            msg: format!("expected header `format={FORMAT_TAG}`"),
                        })
                    }
                }
            }
            let metadata = line
                .split_once('=')
                .filter(|(k, _)| !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if let Some((key, value)) = metadata {
                let value = value.trim();
                match key.trim() {
                    "source" => source_note = value.to_string(),
                    "carrier_hz" => carrier_hz = Some(parse_f64(value, lineno, "carrier_hz")?),
                    "gamma_natural_hz" => default_gamma = Some(parse_f64(value, lineno, "gamma_natural_hz")?),
                    "format" => {
                        return Err(AtomicDataError::Parse {
                            line: lineno,
                            msg: "repeated format header".into(),
                        })
                    }
                    other => {
                        return Err(AtomicDataError::Parse {
                            line: lineno,
                            msg: format!("unknown metadata key {other:?}"),
                        })
                    }
                }
                continue;
            }

            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 8 {
                return Err(AtomicDataError::Parse {
                    line: lineno,
                    msg: format!("expected 8 fields, found {}", fields.len()),
                });
            }
            let kind: IsotopeKind = fields[0]
                .parse()
                .map_err(|msg| AtomicDataError::Parse { line: lineno, msg })?;
            let abundance = parse_f64(fields[1], lineno, "abundance")?;
            let mass_kg = parse_f64(fields[2], lineno, "mass_kg")?;
            let f_ground: u8 = fields[3].parse().map_err(|_| AtomicDataError::Parse {
                line: lineno,
                msg: format!("bad f_ground {:?}", fields[3]),
            })?;
            let label = fields[4].to_string();
            if label.is_empty() || label.starts_with("co(") {
                return Err(AtomicDataError::Parse {
                    line: lineno,
                    msg: format!("bad excited-state label {label:?}"),
                });
            }
            let detuning_hz = parse_f64(fields[5], lineno, "detuning_hz")?;
            let strength = parse_f64(fields[6], lineno, "strength")?;
            let gamma = if fields[7] == "default" {
                None
            } else {
                Some(parse_f64(fields[7], lineno, "gamma_natural_hz")?)
            };

            if !(0.0..=1.0).contains(&abundance) {
                return Err(AtomicDataError::Parse {
                    line: lineno,
                    msg: format!("abundance {abundance} outside [0, 1]"),
                });
            }
            if !(mass_kg > 0.0) {
                return Err(AtomicDataError::Parse {
                    line: lineno,
                    msg: format!("mass must be positive, got {mass_kg}"),
                });
            }
            if !(strength > 0.0) {
                return Err(AtomicDataError::Parse {
                    line: lineno,
                    msg: format!("strength must be positive, got {strength}"),
                });
            }
            if !detuning_hz.is_finite() {
                return Err(AtomicDataError::Parse {
                    line: lineno,
                    msg: "detuning must be finite".into(),
                });
            }

            match isotopes.iter().find(|i| i.kind == kind) {
                Some(existing) if existing.abundance != abundance || existing.mass_kg != mass_kg => {
                    return Err(AtomicDataError::Parse {
                        line: lineno,
                        msg: format!("inconsistent abundance or mass for {kind}"),
                    })
                }
                Some(_) => {}
                None => isotopes.push(Isotope {
                    kind,
                    abundance,
                    mass_kg,
                }),
            }

            if let Some((_, _, prev)) = records.last() {
                if detuning_hz < prev.detuning_hz {
                    return Err(AtomicDataError::Unsorted { line: lineno });
                }
            }
            let duplicate = records.iter().any(|(_, _, r)| {
                r.detuning_hz == detuning_hz
                    || (r.isotope == kind && r.f_ground == f_ground && r.f_excited_label == label)
            });
            if duplicate {
                return Err(AtomicDataError::Duplicate { line: lineno });
            }

            records.push((
                lineno,
                gamma,
                TransitionLine {
                    isotope: kind,
                    f_ground,
                    f_excited_label: label,
                    detuning_hz,
                    strength,
                    gamma_natural_hz: 0.0,
                    is_crossover: false,
                },
            ));
        }

        if !format_seen {
            return Err(AtomicDataError::Parse {
                line: 1,
                msg: format!("missing header `format={FORMAT_TAG}`"),
            });
        }
        let carrier_hz = carrier_hz.ok_or_else(|| AtomicDataError::Invalid("missing carrier_hz".into()))?;
        if !(carrier_hz > 0.0) || !carrier_hz.is_finite() {
            return Err(AtomicDataError::Invalid("carrier_hz must be positive".into()));
        }

        let default_gamma_hz = default_gamma.unwrap_or(f64::NAN);
        let mut lines = Vec::with_capacity(records.len());
        for (lineno, gamma, mut rec) in records {
            let g = gamma.unwrap_or(default_gamma_hz);
            if !(g > 0.0) {
                return Err(AtomicDataError::Parse {
                    line: lineno,
                    msg: "natural linewidth must be positive (is gamma_natural_hz set?)".into(),
                });
            }
            rec.gamma_natural_hz = g;
            lines.push(rec);
        }

        let total: f64 = isotopes.iter().map(|i| i.abundance).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AtomicDataError::AbundanceSum(total));
        }
        isotopes.sort_by_key(|i| i.kind);

        let table = LineTable {
            carrier_hz,
            default_gamma_hz,
            isotopes,
            lines,
            source_note,
        };
        for (iso, f) in [
            (IsotopeKind::Rb87, 1),
            (IsotopeKind::Rb87, 2),
            (IsotopeKind::Rb85, 2),
            (IsotopeKind::Rb85, 3),
        ] {
            if !table.lines.iter().any(|l| l.isotope == iso && l.f_ground == f) {
                return Err(AtomicDataError::Invalid(format!(
                    "missing D2 ground manifold {iso} F={f}"
                )));
            }
        }
        Ok(table)
    }

    /// Serializes back into the `rb-lines/1` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("format={FORMAT_TAG}\n"));
        if !self.source_note.is_empty() {
            out.push_str(&format!("source={}\n", self.source_note));
        }
        out.push_str(&format!("carrier_hz={:?}\n", self.carrier_hz));
        if self.default_gamma_hz.is_finite() {
            out.push_str(&format!("gamma_natural_hz={:?}\n", self.default_gamma_hz));
        }
        out.push_str(
            "# isotope, abundance, mass_kg, f_ground, f_excited_label, detuning_hz, strength, gamma_natural_hz\n",
        );
        for line in &self.lines {
            let iso = self.isotope(line.isotope).expect("isotope present");
            let gamma = if line.gamma_natural_hz == self.default_gamma_hz {
                "default".to_string()
            } else {
                format!("{:?}", line.gamma_natural_hz)
            };
            out.push_str(&format!(
                "{}, {:?}, {:?}, {}, {}, {:?}, {:?}, {}\n",
                line.isotope,
                iso.abundance,
                iso.mass_kg,
                line.f_ground,
                line.f_excited_label,
                line.detuning_hz,
                line.strength,
                gamma
            ));
        }
        out
    }

    pub fn isotope(&self, kind: IsotopeKind) -> Option<&Isotope> {
        self.isotopes.iter().find(|i| i.kind == kind)
    }

    /// Distinct ground-state manifolds, in order of first appearance by detuning.
    pub fn manifolds(&self) -> Vec<(IsotopeKind, u8)> {
        let mut out: Vec<(IsotopeKind, u8)> = Vec::new();
        for l in &self.lines {
            if !out.contains(&(l.isotope, l.f_ground)) {
                out.push((l.isotope, l.f_ground));
            }
        }
        out
    }

    /// Direct lines of one Doppler manifold, ascending in detuning.
    pub fn transitions(&self, isotope: IsotopeKind, f_ground: u8) -> Result<Vec<TransitionLine>> {
        let lines: Vec<TransitionLine> = self
            .lines
            .iter()
            .filter(|l| l.isotope == isotope && l.f_ground == f_ground)
            .cloned()
            .collect();
        if lines.is_empty() {
            return Err(AtomicDataError::UnknownManifold { isotope, f_ground });
        }
        Ok(lines)
    }

    /// Direct lines and crossovers of one manifold, ascending in detuning.
    pub fn features(
        &self,
        isotope: IsotopeKind,
        f_ground: u8,
        crossover_enhancement: f64,
    ) -> Result<Vec<TransitionLine>> {
        let mut all = self.transitions(isotope, f_ground)?;
        all.extend(derive_crossovers(&all, crossover_enhancement)?);
        all.sort_by(|a, b| a.detuning_hz.total_cmp(&b.detuning_hz));
        Ok(all)
    }

    pub fn feature(&self, id: &FeatureId) -> Result<TransitionLine> {
        let features = self
            .features(id.isotope, id.f_ground, 1.0)
            .map_err(|_| AtomicDataError::UnknownFeature(id.to_string()))?;
        features
            .into_iter()
            .find(|l| l.f_excited_label == id.label)
            .ok_or_else(|| AtomicDataError::UnknownFeature(id.to_string()))
    }

    /// |detuning(pump) − detuning(repump)| in Hz.
    pub fn pump_repump_separation(&self, pump: &FeatureId, repump: &FeatureId) -> Result<f64> {
        let a = self.feature(pump)?;
        let b = self.feature(repump)?;
        Ok((a.detuning_hz - b.detuning_hz).abs())
    }
}

/// One crossover per unordered pair of lines, at the pair's midpoint.
///
/// Strength is the parents' mean times `enhancement`; the natural width is
/// the parents' mean.
pub fn derive_crossovers(lines: &[TransitionLine], enhancement: f64) -> Result<Vec<TransitionLine>> {
    let Some(first) = lines.first() else {
        return Ok(Vec::new());
    };
    if lines.iter().any(|l| !l.same_manifold(first) || l.is_crossover) {
        return Err(AtomicDataError::MixedManifolds);
    }
    if !(enhancement > 0.0) {
        return Err(AtomicDataError::Invalid(format!(
            "crossover enhancement must be positive, got {enhancement}"
        )));
    }
    let mut out = Vec::with_capacity(lines.len() * lines.len().saturating_sub(1) / 2);
    for (i, a) in lines.iter().enumerate() {
        for b in &lines[i + 1..] {
            if a.f_excited_label == b.f_excited_label {
                return Err(AtomicDataError::Invalid(format!(
                    "duplicate line {}",
                    a.f_excited_label
                )));
            }
            let (lo, hi) = if a.detuning_hz <= b.detuning_hz { (a, b) } else { (b, a) };
            out.push(TransitionLine {
                isotope: a.isotope,
                f_ground: a.f_ground,
                f_excited_label: crossover_label(&lo.f_excited_label, &hi.f_excited_label),
                detuning_hz: 0.5 * (a.detuning_hz + b.detuning_hz),
                strength: 0.5 * (a.strength + b.strength) * enhancement,
                gamma_natural_hz: 0.5 * (a.gamma_natural_hz + b.gamma_natural_hz),
                is_crossover: true,
            });
        }
    }
    Ok(out)
}

fn crossover_label(a: &str, b: &str) -> String {
    let strip = |s: &str| s.strip_prefix("F'=").unwrap_or(s).to_string();
    let (mut x, mut y) = (strip(a), strip(b));
    if let (Ok(p), Ok(q)) = (x.parse::<i32>(), y.parse::<i32>()) {
        if p > q {
            std::mem::swap(&mut x, &mut y);
        }
    }
    format!("co({x},{y})")
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| AtomicDataError::Parse {
        line,
        msg: format!("bad {what} {s:?}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MHZ: f64 = 1e6;

    #[test]
    fn bundled_abundances() {
        let t = LineTable::bundled();
        assert_eq!(t.isotope(IsotopeKind::Rb85).unwrap().abundance, 0.72);
        assert_eq!(t.isotope(IsotopeKind::Rb87).unwrap().abundance, 0.28);
    }

    #[test]
    fn abundance_sum_rejected() {
        let text = LineTable::bundled()
            .to_text()
            .replace("Rb87, 0.28", "Rb87, 0.6")
            .replace("Rb85, 0.72", "Rb85, 0.5");
        assert!(matches!(LineTable::parse(&text), Err(AtomicDataError::AbundanceSum(_))));
    }

    #[test]
    fn manifolds_have_three_lines() {
        let t = LineTable::bundled();
        let f2 = t.transitions(IsotopeKind::Rb87, 2).unwrap();
        let f1 = t.transitions(IsotopeKind::Rb87, 1).unwrap();
        assert_eq!(f2.len(), 3);
        assert_eq!(f1.len(), 3);
        assert!(f2.iter().all(|a| f1.iter().all(|b| a != b)));
        let labels: Vec<_> = t
            .transitions(IsotopeKind::Rb85, 3)
            .unwrap()
            .into_iter()
            .map(|l| l.f_excited_label)
            .collect();
        assert_eq!(labels, ["F'=2", "F'=3", "F'=4"]);
        assert!(matches!(
            t.transitions(IsotopeKind::Rb85, 4),
            Err(AtomicDataError::UnknownManifold { .. })
        ));
    }

    #[test]
    fn crossover_midpoints() {
        let t = LineTable::bundled();
        let lines = t.transitions(IsotopeKind::Rb87, 2).unwrap();
        let co = derive_crossovers(&lines, 1.0).unwrap();
        assert_eq!(co.len(), 3);
        let c23 = co.iter().find(|c| c.f_excited_label == "co(2,3)").unwrap();
        assert_eq!(c23.detuning_hz, 0.5 * (-266_652_000.0 + 0.0));
        assert!(c23.is_crossover);
        assert!((c23.strength - 0.475).abs() < 1e-15);
    }

    #[test]
    fn crossovers_reject_mixed_manifolds() {
        let t = LineTable::bundled();
        let mut lines = t.transitions(IsotopeKind::Rb87, 2).unwrap();
        lines.extend(t.transitions(IsotopeKind::Rb87, 1).unwrap());
        assert!(matches!(
            derive_crossovers(&lines, 1.0),
            Err(AtomicDataError::MixedManifolds)
        ));
    }

    #[test]
    fn pump_repump() {
        let t = LineTable::bundled();
        let sep = t
            .pump_repump_separation(&FeatureId::default_pump(), &FeatureId::default_repump())
            .unwrap();
        assert!((6.4e9..=6.7e9).contains(&sep), "{sep}");
        let p = FeatureId::default_pump();
        assert_eq!(t.pump_repump_separation(&p, &p).unwrap(), 0.0);
        let a = FeatureId::new(IsotopeKind::Rb87, 2, "F'=1");
        let b = FeatureId::new(IsotopeKind::Rb87, 2, "F'=3");
        assert!(t.pump_repump_separation(&a, &b).unwrap() < 1e3 * MHZ);
        let bogus = FeatureId::new(IsotopeKind::Rb87, 2, "F'=7");
        assert!(t.pump_repump_separation(&bogus, &b).is_err());
    }

    #[test]
    fn format_errors() {
        assert!(matches!(
            LineTable::parse("format=rb-lines/2\n"),
            Err(AtomicDataError::UnknownFormat(_))
        ));
        let text = LineTable::bundled().to_text();
        let broken = text.replacen("0.05, default", "abc, default", 1);
        match LineTable::parse(&broken) {
            Err(AtomicDataError::Parse { line, .. }) => assert!(line > 1),
            other => panic!("{other:?}"),
        }
        // swap two records
        let mut rows: Vec<&str> = text.lines().collect();
        let n = rows.len();
        rows.swap(n - 1, n - 2);
        assert!(matches!(
            LineTable::parse(&rows.join("\n")),
            Err(AtomicDataError::Unsorted { .. })
        ));
        let dup = format!("{text}{}\n", text.lines().last().unwrap());
        assert!(matches!(
            LineTable::parse(&dup),
            Err(AtomicDataError::Unsorted { .. } | AtomicDataError::Duplicate { .. })
        ));
        assert!(matches!(
            LineTable::load("/nonexistent/lines.txt"),
            Err(AtomicDataError::Io { .. })
        ));
    }

    #[test]
    fn feature_id_parse() {
        let id: FeatureId = "Rb87 F=2 co(2,3)".parse().unwrap();
        assert_eq!(id, FeatureId::default_pump());
        assert_eq!(id.to_string(), "Rb87 F=2 co(2,3)");
        assert!("Rb87 co(2,3)".parse::<FeatureId>().is_err());
    }
}
