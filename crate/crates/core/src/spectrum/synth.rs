use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{content_hash, MediumConfig, NoiseConfig, SpectrumError, SweepSpec, SweepTrace, TraceMeta};
use crate::atomic_data::{IsotopeKind, LineTable};
use crate::lineshape::{self, LorentzianParams, CODATA};

/// One sub-Doppler feature as it enters the probe channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DipFeature {
    pub isotope: IsotopeKind,
    pub f_ground: u8,
    pub label: String,
    pub is_crossover: bool,
    /// Fractional reduction of optical depth at the feature centre.
    pub amplitude: f64,
    pub profile: LorentzianParams,
}

#[derive(Debug, Clone)]
struct Manifold {
    isotope: IsotopeKind,
    f_ground: u8,
    doppler_fwhm: f64,
    /// (detuning, strength) of the direct lines.
    lines: Vec<(f64, f64)>,
    /// Scale that maps the raw envelope onto this manifold's peak optical depth.
    scale: f64,
}

impl Manifold {
    fn envelope(&self, nu: f64) -> f64 {
        self.lines
            .iter()
            .map(|&(d, s)| s * lineshape::gaussian_unit_peak(nu, d, self.doppler_fwhm))
            .sum()
    }

    fn span(&self) -> (f64, f64) {
        (self.lines[0].0, self.lines[self.lines.len() - 1].0)
    }
}

/// Doppler valleys plus sub-Doppler dips, evaluated at any detuning.
///
/// Optical depth is `OD(ν) = Σ_m OD_m Ĝ_m(ν)` where `Ĝ_m` is the
/// strength-weighted sum of the manifold's Doppler Gaussians normalised to
/// unit peak, and `OD_m = OD₀ · w_m / max w` with `w_m = abundance · Σ strength`.
/// With the pump on, the probe sees `OD(ν) · max(0, 1 − Σ_f a_f L_f(ν))`.
#[derive(Debug, Clone)]
pub struct SpectrumModel {
    manifolds: Vec<Manifold>,
    features: Vec<DipFeature>,
}

impl SpectrumModel {
    pub fn new(table: &LineTable, medium: &MediumConfig) -> Result<Self, SpectrumError> {
        medium.validate()?;
        if table.lines.is_empty() {
            return Err(SpectrumError::EmptyTable);
        }
        let sat = medium.saturation_s / (1.0 + medium.saturation_s);
        let mut manifolds = Vec::new();
        let mut features = Vec::new();
        let mut weights = Vec::new();
        for (iso, f) in table.manifolds() {
            let isotope = table
                .isotope(iso)
                .ok_or_else(|| SpectrumError::InvalidMedium(format!("no isotope {iso}")))?;
            let direct = table.transitions(iso, f)?;
            let centre = direct.iter().map(|l| l.detuning_hz).sum::<f64>() / direct.len() as f64;
            let doppler_fwhm = lineshape::doppler_fwhm(
                medium.temperature_k,
                isotope.mass_kg,
                table.carrier_hz + centre,
                &CODATA,
            )?;
            let strongest = direct.iter().map(|l| l.strength).fold(0.0, f64::max);
            weights.push(isotope.abundance * direct.iter().map(|l| l.strength).sum::<f64>());
            for line in table.features(iso, f, medium.crossover_enhancement)? {
                let width = lineshape::saturation_broadened_width(line.gamma_natural_hz, medium.saturation_s)?;
                features.push(DipFeature {
                    isotope: iso,
                    f_ground: f,
                    label: line.f_excited_label.clone(),
                    is_crossover: line.is_crossover,
                    amplitude: medium.dip_contrast * sat * line.strength / strongest,
                    profile: LorentzianParams::new(line.detuning_hz, width)?,
                });
            }
            manifolds.push(Manifold {
                isotope: iso,
                f_ground: f,
                doppler_fwhm,
                lines: direct.iter().map(|l| (l.detuning_hz, l.strength)).collect(),
                scale: 1.0,
            });
        }

        let w_max = weights.iter().cloned().fold(0.0, f64::max);
        for (m, w) in manifolds.iter_mut().zip(&weights) {
            let peak = envelope_peak(m);
            m.scale = medium.peak_optical_depth * (w / w_max) / peak;
        }
        features.sort_by(|a, b| a.profile.nu0.total_cmp(&b.profile.nu0));
        Ok(Self { manifolds, features })
    }

    pub fn features(&self) -> &[DipFeature] {
        &self.features
    }

    /// Doppler FWHM of a manifold.
    pub fn doppler_fwhm(&self, isotope: IsotopeKind, f_ground: u8) -> Option<f64> {
        self.manifolds
            .iter()
            .find(|m| m.isotope == isotope && m.f_ground == f_ground)
            .map(|m| m.doppler_fwhm)
    }

    /// `[first line − k·ΔνD, last line + k·ΔνD]` for every manifold.
    pub fn doppler_windows(&self, k: f64) -> Vec<(IsotopeKind, u8, f64, f64)> {
        self.manifolds
            .iter()
            .map(|m| {
                let (lo, hi) = m.span();
                (m.isotope, m.f_ground, lo - k * m.doppler_fwhm, hi + k * m.doppler_fwhm)
            })
            .collect()
    }

    pub fn optical_depth(&self, nu: f64) -> f64 {
        self.manifolds.iter().map(|m| m.scale * m.envelope(nu)).sum()
    }

    pub fn dip_fraction(&self, nu: f64) -> f64 {
        self.features
            .iter()
            .map(|f| f.amplitude * lineshape::lorentzian(nu, &f.profile))
            .sum()
    }

    /// Noiseless (reference, probe) transmission at unit detector gain.
    pub fn transmission(&self, nu: f64) -> (f64, f64) {
        let od = self.optical_depth(nu);
        let dips = self.dip_fraction(nu);
        ((-od).exp(), (-od * (1.0 - dips).max(0.0)).exp())
    }

    /// Noiseless probe − reference.
    pub fn differential(&self, nu: f64) -> f64 {
        let (r, p) = self.transmission(nu);
        p - r
    }
}

fn envelope_peak(m: &Manifold) -> f64 {
    let (lo, hi) = m.span();
    let (lo, hi) = (lo - m.doppler_fwhm, hi + m.doppler_fwhm);
    let n = 4001;
    let step = (hi - lo) / (n - 1) as f64;
    let (mut best_x, mut best) = (lo, f64::MIN);
    for i in 0..n {
        let x = lo + i as f64 * step;
        let v = m.envelope(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    // golden-section polish around the best grid point
    let (mut a, mut b) = (best_x - step, best_x + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if m.envelope(c) > m.envelope(d) {
            b = d
        } else {
            a = c
        }
    }
    m.envelope(0.5 * (a + b)).max(best)
}

/// Doppler FWHM per manifold at the medium temperature.
pub fn doppler_widths(table: &LineTable, medium: &MediumConfig) -> Result<Vec<(IsotopeKind, u8, f64)>, SpectrumError> {
    let model = SpectrumModel::new(table, medium)?;
    Ok(model
        .manifolds
        .iter()
        .map(|m| (m.isotope, m.f_ground, m.doppler_fwhm))
        .collect())
}

/// Samples reference, probe and differential channels over `sweep`.
///
/// Reference and probe carry independent noise streams derived from
/// `noise.seed`; the differential is the noisy probe minus the noisy
/// reference. Detector outputs are clipped at 0 V.
pub fn synthesize_sweep(
    table: &LineTable,
    medium: &MediumConfig,
    sweep: &SweepSpec,
    noise: &NoiseConfig,
) -> Result<SweepTrace, SpectrumError> {
    sweep.validate()?;
    if !(noise.sigma_v >= 0.0) || !noise.sigma_v.is_finite() {
        return Err(SpectrumError::InvalidSweep(format!(
            "noise sigma must be non-negative, got {}",
            noise.sigma_v
        )));
    }
    let model = SpectrumModel::new(table, medium)?;
    let axis = sweep.axis();
    let mut reference = Vec::with_capacity(axis.len());
    let mut probe = Vec::with_capacity(axis.len());
    for &nu in &axis {
        let (r, p) = model.transmission(nu);
        reference.push(r);
        probe.push(p);
    }
    if noise.sigma_v > 0.0 {
        let normal = Normal::new(0.0, noise.sigma_v).expect("finite sigma");
        let mut rng_ref = ChaCha8Rng::seed_from_u64(noise.seed);
        rng_ref.set_stream(1);
        let mut rng_probe = ChaCha8Rng::seed_from_u64(noise.seed);
        rng_probe.set_stream(2);
        for v in reference.iter_mut() {
            *v = (*v + normal.sample(&mut rng_ref)).max(0.0);
        }
        for v in probe.iter_mut() {
            *v = (*v + normal.sample(&mut rng_probe)).max(0.0);
        }
    }
    let differential = probe.iter().zip(&reference).map(|(p, r)| p - r).collect();
    let hash = content_hash(&format!("{}|{medium:?}|{sweep:?}|{noise:?}", table.to_text()));
    SweepTrace::new(
        axis,
        reference,
        probe,
        differential,
        TraceMeta {
            samples_per_ramp: sweep.samples,
            noise_seed: noise.seed,
            config_hash: hash,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::signal::local_maxima;

    fn f2_window() -> SweepSpec {
        SweepSpec {
            start_hz: -1.0e9,
            stop_hz: 0.6e9,
            samples: 6401,
        }
    }

    #[test]
    fn no_pump_means_no_dips() {
        let t = LineTable::bundled();
        let medium = MediumConfig {
            saturation_s: 0.0,
            ..Default::default()
        };
        let tr = synthesize_sweep(&t, &medium, &f2_window(), &NoiseConfig::off()).unwrap();
        assert_eq!(tr.probe, tr.reference);
        assert!(tr.differential.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_line_single_extremum() {
        let text = LineTable::bundled().to_text();
        // keep only one line of the 87Rb F=2 manifold (manifolds must stay present)
        let text: String = text
            .lines()
            .filter(|l| {
                !(l.contains("Rb87") && l.contains(", 2, F'=1")) && !(l.contains("Rb87") && l.contains(", 2, F'=2"))
            })
            .map(|l| format!("{l}\n"))
            .collect();
        let t = LineTable::parse(&text).unwrap();
        let tr = synthesize_sweep(&t, &MediumConfig::default(), &f2_window(), &NoiseConfig::off()).unwrap();
        let r = tr.index_range(-0.8e9, 0.5e9);
        let peaks = local_maxima(&tr.differential[r.clone()], 0.0);
        assert_eq!(peaks.len(), 1);
        let i = peaks[0] + r.start;
        assert!((tr.detuning_hz[i] - 0.0).abs() <= tr.step_hz() * 1.0001);
    }

    #[test]
    fn isotope_order() {
        let t = LineTable::bundled();
        let tr = synthesize_sweep(&t, &MediumConfig::default(), &SweepSpec::default(), &NoiseConfig::off()).unwrap();
        let argmin = |lo: f64, hi: f64| {
            let r = tr.index_range(lo, hi);
            let i = r
                .clone()
                .min_by(|&a, &b| tr.reference[a].total_cmp(&tr.reference[b]))
                .unwrap();
            tr.detuning_hz[i]
        };
        let v87 = argmin(-1.0e9, 0.5e9);
        let v85 = argmin(0.5e9, 2.0e9);
        assert!(v87 < v85);
    }

    #[test]
    fn saturation_only_bleaches() {
        let t = LineTable::bundled();
        let tr = synthesize_sweep(&t, &MediumConfig::default(), &SweepSpec::default(), &NoiseConfig::off()).unwrap();
        assert!(tr.probe.iter().zip(&tr.reference).all(|(p, r)| p >= r));
        assert!(tr.differential.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn deeper_medium_absorbs_more() {
        let t = LineTable::bundled();
        let m1 = MediumConfig::default();
        let m2 = MediumConfig {
            peak_optical_depth: 2.0 * m1.peak_optical_depth,
            ..m1.clone()
        };
        let s = SweepSpec::default();
        let a = synthesize_sweep(&t, &m1, &s, &NoiseConfig::off()).unwrap();
        let b = synthesize_sweep(&t, &m2, &s, &NoiseConfig::off()).unwrap();
        assert!(b.reference.iter().zip(&a.reference).all(|(x, y)| x <= y));
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let t = LineTable::bundled();
        let s = f2_window();
        let n = NoiseConfig::default();
        let a = synthesize_sweep(&t, &MediumConfig::default(), &s, &n).unwrap();
        let b = synthesize_sweep(&t, &MediumConfig::default(), &s, &n).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = synthesize_sweep(&t, &MediumConfig::default(), &s, &NoiseConfig { seed: 2, ..n }).unwrap();
        assert_ne!(a.probe, c.probe);
        assert_ne!(a.reference[..100], a.probe[..100]);
    }

    #[test]
    fn bad_sweeps() {
        let t = LineTable::bundled();
        let m = MediumConfig::default();
        let n = NoiseConfig::off();
        let inverted = SweepSpec {
            start_hz: 1.0,
            stop_hz: 0.0,
            samples: 100,
        };
        assert!(synthesize_sweep(&t, &m, &inverted, &n).is_err());
        let short = SweepSpec {
            start_hz: 0.0,
            stop_hz: 1.0,
            samples: 8,
        };
        assert!(synthesize_sweep(&t, &m, &short, &n).is_err());
    }
}
