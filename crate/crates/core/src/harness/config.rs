//! Scenario configuration: a sectioned `key = value` text file.
//!
//! ```text
//! format=sas-config/1
//! [medium]
//! temperature_k=312.65
//! ...
//! ```
//!
//! Every key is optional and falls back to the built-in default; unknown
//! sections and keys are rejected. [`ScenarioConfig::to_text`] writes the
//! canonical form, which is also what the config hash is computed over.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::HarnessError;
use crate::atomic_data::{FeatureId, LineTable};
use crate::plant::{PlantConfig, RampConfig};
use crate::servo::{LockTuning, LoopConfig, PidConfig};
use crate::spectrum::{content_hash, ErrorMode, MediumConfig, NoiseConfig, SweepSpec};

pub const CONFIG_FORMAT: &str = "sas-config/1";
/// Directory holding `default.conf`, overriding the bundled copy.
pub const CONFIG_DIR_ENV: &str = "SAS_CONFIG_DIR";
pub const DEFAULT_CONFIG_NAME: &str = "default.conf";

const BUNDLED_DEFAULT: &str = include_str!("../../defaults/default.conf");

#[derive(Debug, Clone, PartialEq)]
pub struct ServoSettings {
    pub target: FeatureId,
    pub mode: ErrorMode,
    /// Moving-average length of the error conditioning, readout samples (odd).
    pub smoothing_window: usize,
    pub readout_halfspan_hz: f64,
    pub readout_step_hz: f64,
    pub sample_rate: f64,
    pub invert_polarity: bool,
    pub engage_offset_hz: f64,
    pub tuning: LockTuning,
}

impl Default for ServoSettings {
    fn default() -> Self {
        let lc = LoopConfig::default();
        Self {
            target: FeatureId::default_pump(),
            mode: ErrorMode::Derivative,
            smoothing_window: 41,
            readout_halfspan_hz: 1.5e9,
            readout_step_hz: 0.1e6,
            sample_rate: lc.sample_rate,
            invert_polarity: lc.invert_polarity,
            engage_offset_hz: lc.engage_offset_hz,
            tuning: lc.tuning,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub seed: u64,
    /// Total length of the lock run, s.
    pub lock_duration_s: f64,
    /// Span after the first Locked sample used for post-lock statistics, s.
    pub post_lock_window_s: f64,
    pub step_k: f64,
    /// Time of the temperature step, s from the start of the run.
    pub step_time_s: f64,
    /// Time allowed after the step before steady state is read, s.
    pub settle_s: f64,
    /// Averaging span for the steady-state reads, s.
    pub average_s: f64,
    pub resettle_tolerance_hz: f64,
    pub ramp_while_locked: bool,
    /// Low-detuning fluorescence probe, in Doppler widths.
    pub fluorescence_low: f64,
    /// Large-detuning fluorescence probe, in Doppler widths.
    pub fluorescence_large: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            lock_duration_s: 1.2,
            post_lock_window_s: 1.0,
            step_k: 0.1,
            step_time_s: 0.2,
            settle_s: 15.0,
            average_s: 0.1,
            resettle_tolerance_hz: 0.5e6,
            ramp_while_locked: false,
            fluorescence_low: 0.5,
            fluorescence_large: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// `None` selects the bundled line table.
    pub lines_path: Option<PathBuf>,
    pub medium: MediumConfig,
    pub sweep: SweepSpec,
    pub noise_sigma_v: f64,
    pub plant: PlantConfig,
    pub ramp: RampConfig,
    pub pid: PidConfig,
    pub servo: ServoSettings,
    pub experiment: ExperimentSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            lines_path: None,
            medium: MediumConfig::default(),
            sweep: SweepSpec::default(),
            noise_sigma_v: NoiseConfig::default().sigma_v,
            plant: PlantConfig::default(),
            ramp: RampConfig::default(),
            pid: PidConfig::default(),
            servo: ServoSettings::default(),
            experiment: ExperimentSettings::default(),
        }
    }
}

struct Section {
    name: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn take<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<(), HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((value, line)) = self.entries.remove(key) {
            *target = value.parse().map_err(|e: T::Err| HarnessError::Config {
                line,
                msg: format!("[{}] {key}: {e}", self.name),
            })?;
        }
        Ok(())
    }

    fn finish(self) -> Result<(), HarnessError> {
        match self.entries.into_iter().next() {
            Some((key, (_, line))) => Err(HarnessError::Config {
                line,
                msg: format!("unknown key {key:?} in [{}]", self.name),
            }),
            None => Ok(()),
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line: 0,
        msg: msg.into(),
    }
}

impl ScenarioConfig {
    /// The pinned defaults shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_DEFAULT).expect("bundled default config is valid")
    }

    /// `$SAS_CONFIG_DIR/default.conf` if the variable is set, otherwise the
    /// bundled defaults.
    pub fn default_from_env() -> Result<Self, HarnessError> {
        match std::env::var_os(CONFIG_DIR_ENV) {
            Some(dir) => Self::load(Path::new(&dir).join(DEFAULT_CONFIG_NAME)),
            None => Ok(Self::bundled()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut sections: Vec<Section> = Vec::new();
        let mut format_seen = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !format_seen {
                match line.split_once('=') {
                    Some(("format", v)) if v.trim() == CONFIG_FORMAT => {
                        format_seen = true;
                        continue;
                    }
                    Some(("format", v)) => {
                        return Err(HarnessError::Config {
                            line: line_no,
                            msg: format!("unsupported format {:?}", v.trim()),
                        })
                    }
                    _ => {
                        return Err(HarnessError::Config {
                            line: line_no,
                            msg: format!("expected `format={CONFIG_FORMAT}` first"),
                        })
                    }
                }
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if sections.iter().any(|s| s.name == name) {
                    return Err(HarnessError::Config {
                        line: line_no,
                        msg: format!("repeated section [{name}]"),
                    });
                }
                sections.push(Section {
                    name,
                    entries: BTreeMap::new(),
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::Config {
                line: line_no,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let section = sections.last_mut().ok_or_else(|| HarnessError::Config {
                line: line_no,
                msg: "key outside of any section".into(),
            })?;
            let key = key.trim().to_string();
            if section.entries.contains_key(&key) {
                return Err(HarnessError::Config {
                    line: line_no,
                    msg: format!("repeated key {key:?}"),
                });
            }
            section.entries.insert(key, (value.trim().to_string(), line_no));
        }
        if !format_seen {
            return Err(HarnessError::Config {
                line: 0,
                msg: format!("missing `format={CONFIG_FORMAT}` header"),
            });
        }

        let mut cfg = ScenarioConfig::default();
        for mut s in sections {
            match s.name.as_str() {
                "lines" => {
                    let mut path = String::from("bundled");
                    s.take("path", &mut path)?;
                    cfg.lines_path = (path != "bundled").then(|| PathBuf::from(path));
                }
                "medium" => {
                    let m = &mut cfg.medium;
                    s.take("temperature_k", &mut m.temperature_k)?;
                    s.take("peak_optical_depth", &mut m.peak_optical_depth)?;
                    s.take("saturation_s", &mut m.saturation_s)?;
                    s.take("crossover_enhancement", &mut m.crossover_enhancement)?;
                    s.take("dip_contrast", &mut m.dip_contrast)?;
                }
                "sweep" => {
                    s.take("start_hz", &mut cfg.sweep.start_hz)?;
                    s.take("stop_hz", &mut cfg.sweep.stop_hz)?;
                    s.take("samples", &mut cfg.sweep.samples)?;
                }
                "noise" => s.take("sigma_v", &mut cfg.noise_sigma_v)?,
                "plant" => {
                    let p = &mut cfg.plant;
                    s.take("k_current", &mut p.k_current)?;
                    s.take("k_temp", &mut p.k_temp)?;
                    s.take("k_ctrl", &mut p.k_ctrl)?;
                    s.take("linewidth", &mut p.linewidth)?;
                    s.take("mode_hop_span", &mut p.mode_hop_span)?;
                    s.take("drift_rate", &mut p.drift_rate)?;
                    s.take("base_detuning", &mut p.base_detuning)?;
                    s.take("bias_current", &mut p.bias_current)?;
                    s.take("reference_temperature", &mut p.reference_temperature)?;
                    s.take("thermal_tau", &mut p.thermal_tau)?;
                }
                "ramp" => {
                    let r = &mut cfg.ramp;
                    s.take("frequency", &mut r.frequency)?;
                    s.take("span", &mut r.span)?;
                    s.take("shape", &mut r.shape)?;
                    s.take("enabled", &mut r.enabled)?;
                }
                "pid" => {
                    let p = &mut cfg.pid;
                    s.take("kp", &mut p.kp)?;
                    s.take("ki", &mut p.ki)?;
                    s.take("kd", &mut p.kd)?;
                    s.take("offset", &mut p.offset)?;
                    s.take("output_min", &mut p.output_min)?;
                    s.take("output_max", &mut p.output_max)?;
                    s.take("derivative_smoothing", &mut p.derivative_smoothing)?;
                }
                "servo" => {
                    let v = &mut cfg.servo;
                    s.take("target", &mut v.target)?;
                    s.take("mode", &mut v.mode)?;
                    s.take("smoothing_window", &mut v.smoothing_window)?;
                    s.take("readout_halfspan_hz", &mut v.readout_halfspan_hz)?;
                    s.take("readout_step_hz", &mut v.readout_step_hz)?;
                    s.take("sample_rate", &mut v.sample_rate)?;
                    s.take("invert_polarity", &mut v.invert_polarity)?;
                    s.take("engage_offset_hz", &mut v.engage_offset_hz)?;
                    let t = &mut v.tuning;
                    s.take("lock_fraction", &mut t.lock_fraction)?;
                    s.take("loss_fraction", &mut t.loss_fraction)?;
                    s.take("level_fraction", &mut t.level_fraction)?;
                    s.take("hold_time", &mut t.hold_time)?;
                    s.take("loss_time", &mut t.loss_time)?;
                    s.take("relock_delay", &mut t.relock_delay)?;
                    s.take("sweep_time", &mut t.sweep_time)?;
                    s.take("detector_window", &mut t.detector_window)?;
                    s.take("auto_relock", &mut t.auto_relock)?;
                }
                "experiment" => {
                    let e = &mut cfg.experiment;
                    s.take("seed", &mut e.seed)?;
                    s.take("lock_duration_s", &mut e.lock_duration_s)?;
                    s.take("post_lock_window_s", &mut e.post_lock_window_s)?;
                    s.take("step_k", &mut e.step_k)?;
                    s.take("step_time_s", &mut e.step_time_s)?;
                    s.take("settle_s", &mut e.settle_s)?;
                    s.take("average_s", &mut e.average_s)?;
                    s.take("resettle_tolerance_hz", &mut e.resettle_tolerance_hz)?;
                    s.take("ramp_while_locked", &mut e.ramp_while_locked)?;
                    s.take("fluorescence_low", &mut e.fluorescence_low)?;
                    s.take("fluorescence_large", &mut e.fluorescence_large)?;
                }
                other => {
                    let line = s.entries.values().map(|(_, l)| *l).min().unwrap_or(0);
                    return Err(HarnessError::Config {
                        line,
                        msg: format!("unknown section [{other}]"),
                    });
                }
            }
            s.finish()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section against its module's invariants.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let wrap = |e: &dyn std::fmt::Display| invalid(e.to_string());
        self.medium.validate().map_err(|e| wrap(&e))?;
        self.sweep.validate().map_err(|e| wrap(&e))?;
        if !(self.noise_sigma_v >= 0.0) || !self.noise_sigma_v.is_finite() {
            return Err(invalid("noise sigma_v must be non-negative"));
        }
        self.loop_config().validate().map_err(|e| wrap(&e))?;
        let s = &self.servo;
        if s.smoothing_window == 0 || s.smoothing_window.is_multiple_of(2) {
            return Err(invalid("servo smoothing_window must be odd"));
        }
        if !(s.readout_step_hz > 0.0) || !(s.readout_halfspan_hz > 10.0 * s.readout_step_hz) {
            return Err(invalid("servo readout grid must have positive step and span"));
        }
        if !(s.readout_halfspan_hz / s.readout_step_hz < 1e7) {
            return Err(invalid("servo readout grid too fine"));
        }
        if (s.smoothing_window as f64) * s.readout_step_hz >= s.readout_halfspan_hz {
            return Err(invalid("servo smoothing window wider than the readout grid"));
        }
        let e = &self.experiment;
        let positive = [
            ("lock_duration_s", e.lock_duration_s),
            ("post_lock_window_s", e.post_lock_window_s),
            ("settle_s", e.settle_s),
            ("average_s", e.average_s),
            ("resettle_tolerance_hz", e.resettle_tolerance_hz),
            ("fluorescence_low", e.fluorescence_low),
            ("fluorescence_large", e.fluorescence_large),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("experiment {name} must be positive")));
            }
        }
        if !(e.step_time_s >= 0.0) || !e.step_k.is_finite() {
            return Err(invalid("experiment step must be finite with non-negative time"));
        }
        if e.average_s > e.settle_s {
            return Err(invalid("experiment average_s must not exceed settle_s"));
        }
        if e.fluorescence_low >= e.fluorescence_large {
            return Err(invalid("fluorescence_low must be below fluorescence_large"));
        }
        Ok(())
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            plant: self.plant.clone(),
            ramp: self.ramp.clone(),
            pid: self.pid.clone(),
            tuning: self.servo.tuning.clone(),
            sample_rate: self.servo.sample_rate,
            invert_polarity: self.servo.invert_polarity,
            engage_offset_hz: self.servo.engage_offset_hz,
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            sigma_v: self.noise_sigma_v,
            seed: self.experiment.seed,
        }
    }

    pub fn line_table(&self) -> Result<LineTable, HarnessError> {
        match &self.lines_path {
            None => Ok(LineTable::bundled()),
            Some(p) => Ok(LineTable::load(p)?),
        }
    }

    /// Canonical text; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut out = format!("format={CONFIG_FORMAT}\n");
        let mut section = |name: &str, entries: Vec<(&str, String)>| {
            out.push_str(&format!("\n[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k}={v}\n"));
            }
        };
        let f = |v: f64| format!("{v:?}");
        let lines_path = match &self.lines_path {
            None => "bundled".to_string(),
            Some(p) => p.display().to_string(),
        };
        section("lines", vec![("path", lines_path)]);
        let m = &self.medium;
        section(
            "medium",
            vec![
                ("temperature_k", f(m.temperature_k)),
                ("peak_optical_depth", f(m.peak_optical_depth)),
                ("saturation_s", f(m.saturation_s)),
                ("crossover_enhancement", f(m.crossover_enhancement)),
                ("dip_contrast", f(m.dip_contrast)),
            ],
        );
        section(
            "sweep",
            vec![
                ("start_hz", f(self.sweep.start_hz)),
                ("stop_hz", f(self.sweep.stop_hz)),
                ("samples", self.sweep.samples.to_string()),
            ],
        );
        section("noise", vec![("sigma_v", f(self.noise_sigma_v))]);
        let p = &self.plant;
        section(
            "plant",
            vec![
                ("k_current", f(p.k_current)),
                ("k_temp", f(p.k_temp)),
                ("k_ctrl", f(p.k_ctrl)),
                ("linewidth", f(p.linewidth)),
                ("mode_hop_span", f(p.mode_hop_span)),
                ("drift_rate", f(p.drift_rate)),
                ("base_detuning", f(p.base_detuning)),
                ("bias_current", f(p.bias_current)),
                ("reference_temperature", f(p.reference_temperature)),
                ("thermal_tau", f(p.thermal_tau)),
            ],
        );
        let r = &self.ramp;
        section(
            "ramp",
            vec![
                ("frequency", f(r.frequency)),
                ("span", f(r.span)),
                ("shape", r.shape.to_string()),
                ("enabled", r.enabled.to_string()),
            ],
        );
        let p = &self.pid;
        section(
            "pid",
            vec![
                ("kp", f(p.kp)),
                ("ki", f(p.ki)),
                ("kd", f(p.kd)),
                ("offset", f(p.offset)),
                ("output_min", f(p.output_min)),
                ("output_max", f(p.output_max)),
                ("derivative_smoothing", p.derivative_smoothing.to_string()),
            ],
        );
        let s = &self.servo;
        let t = &s.tuning;
        section(
            "servo",
            vec![
                ("target", s.target.to_string()),
                ("mode", s.mode.to_string()),
                ("smoothing_window", s.smoothing_window.to_string()),
                ("readout_halfspan_hz", f(s.readout_halfspan_hz)),
                ("readout_step_hz", f(s.readout_step_hz)),
                ("sample_rate", f(s.sample_rate)),
                ("invert_polarity", s.invert_polarity.to_string()),
                ("engage_offset_hz", f(s.engage_offset_hz)),
                ("lock_fraction", f(t.lock_fraction)),
                ("loss_fraction", f(t.loss_fraction)),
                ("level_fraction", f(t.level_fraction)),
                ("hold_time", f(t.hold_time)),
                ("loss_time", f(t.loss_time)),
                ("relock_delay", f(t.relock_delay)),
                ("sweep_time", f(t.sweep_time)),
                ("detector_window", t.detector_window.to_string()),
                ("auto_relock", t.auto_relock.to_string()),
            ],
        );
        let e = &self.experiment;
        section(
            "experiment",
            vec![
                ("seed", e.seed.to_string()),
                ("lock_duration_s", f(e.lock_duration_s)),
                ("post_lock_window_s", f(e.post_lock_window_s)),
                ("step_k", f(e.step_k)),
                ("step_time_s", f(e.step_time_s)),
                ("settle_s", f(e.settle_s)),
                ("average_s", f(e.average_s)),
                ("resettle_tolerance_hz", f(e.resettle_tolerance_hz)),
                ("ramp_while_locked", e.ramp_while_locked.to_string()),
                ("fluorescence_low", f(e.fluorescence_low)),
                ("fluorescence_large", f(e.fluorescence_large)),
            ],
        );
        out
    }

    /// Hash of the canonical config plus the line table it resolves to.
    pub fn hash(&self) -> Result<String, HarnessError> {
        let table = self.line_table()?;
        Ok(content_hash(&format!("{}\n{}", self.to_text(), table.to_text())))
    }
}
