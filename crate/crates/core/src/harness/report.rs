use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Version tag of the JSON report layout.
pub const REPORT_SCHEMA: &str = "sas-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub unit: String,
    /// Human-readable pass condition, e.g. "> 30".
    pub requirement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub experiment: String,
    pub passed: bool,
    pub seed: u64,
    pub config_hash: String,
    pub criteria: Vec<Criterion>,
    pub values: BTreeMap<String, Measured>,
    pub notes: Vec<String>,
    /// File names relative to the report's directory.
    pub artifacts: Vec<String>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, seed: u64, config_hash: String) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            experiment: experiment.to_string(),
            passed: true,
            seed,
            config_hash,
            criteria: Vec::new(),
            values: BTreeMap::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, measured: f64, unit: &str, requirement: &str, passed: bool) -> bool {
        let passed = passed && !measured.is_nan();
        self.passed &= passed;
        self.criteria.push(Criterion {
            name: name.to_string(),
            passed,
            measured,
            unit: unit.to_string(),
            requirement: requirement.to_string(),
        });
        passed
    }

    pub fn value(&mut self, name: &str, value: f64, unit: &str) {
        self.values.insert(
            name.to_string(),
            Measured {
                value,
                unit: unit.to_string(),
            },
        );
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One `name,passed,measured,unit,requirement` row per criterion.
    pub fn criteria_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["experiment", "criterion", "passed", "measured", "unit", "requirement"])?;
        for c in &self.criteria {
            w.write_record([
                self.experiment.as_str(),
                c.name.as_str(),
                if c.passed { "true" } else { "false" },
                &format!("{:?}", c.measured),
                c.unit.as_str(),
                c.requirement.as_str(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Ingest(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// A report plus the files it refers to, not yet written anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub artifacts: Vec<Artifact>,
}

impl ExperimentOutput {
    pub fn new(report: ExperimentReport) -> Self {
        Self {
            report,
            artifacts: Vec::new(),
        }
    }

    pub fn attach(&mut self, name: String, contents: String) {
        self.report.artifacts.push(name.clone());
        self.artifacts.push(Artifact { name, contents });
    }

    pub fn report_file_name(&self) -> String {
        format!("{}_report.json", self.report.experiment.replace('-', "_"))
    }

    /// Writes every artifact and the JSON report into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |e| HarnessError::Io { path, source: e }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for a in &self.artifacts {
            let p = dir.join(&a.name);
            std::fs::write(&p, &a.contents).map_err(io(&p))?;
        }
        let p = dir.join(self.report_file_name());
        std::fs::write(&p, self.report.to_json()?).map_err(io(&p))?;
        Ok(())
    }
}
