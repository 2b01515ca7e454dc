//! Run artifacts: a long-format CSV table (`step,time,quantity,component,value`)
//! and a JSON manifest listing every check with its verdict.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flows::GuardEvent;

pub const CSV_HEADER: [&str; 5] = ["step", "time", "quantity", "component", "value"];

/// 17 significant digits, so every `f64` round-trips.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub step: usize,
    pub time: f64,
    pub quantity: String,
    pub component: String,
    pub value: f64,
}

/// Rows are kept in insertion order; checks append in a fixed order, so the
/// table is reproducible regardless of how the numbers were computed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub rows: Vec<CsvRow>,
}

impl CsvTable {
    pub fn push(&mut self, step: usize, time: f64, quantity: &str, component: &str, value: f64) {
        self.rows.push(CsvRow { step, time, quantity: quantity.into(), component: component.into(), value });
    }

    /// A `(time, value)` series with steps numbered from zero.
    pub fn push_series(&mut self, quantity: &str, component: &str, series: &[(f64, f64)]) {
        for (k, (t, v)) in series.iter().enumerate() {
            self.push(k, *t, quantity, component, *v);
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                format_float(r.time),
                r.quantity.clone(),
                r.component.clone(),
                format_float(r.value),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| crate::error::LabError::Io(e.into_error()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut rows = vec![];
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| crate::error::LabError::Config(format!("bad number {:?}", &rec[i])))
            };
            rows.push(CsvRow {
                step: num(0)? as usize,
                time: num(1)?,
                quantity: rec[2].to_string(),
                component: rec[3].to_string(),
                value: num(4)?,
            });
        }
        Ok(Self { rows })
    }
}

fn csv_err(e: csv::Error) -> crate::error::LabError {
    crate::error::LabError::Io(std::io::Error::other(e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Identities,
    Conservation,
    Kernel,
    Constraints,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Identities, Family::Conservation, Family::Kernel, Family::Constraints];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Identities => "identities",
            Family::Conservation => "conservation",
            Family::Kernel => "kernel",
            Family::Constraints => "constraints",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub family: Family,
    /// The statement the check certifies.
    pub claim: String,
    pub passed: bool,
    pub tolerance: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub scenario: String,
    pub config: serde_json::Value,
    pub steps: usize,
    pub effective_dt: f64,
    pub guard: Option<GuardEvent>,
    pub checks: Vec<CheckRecord>,
    pub artifacts: Vec<PathBuf>,
    pub passed: bool,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Process exit status of a run or suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    CheckFailed,
    UsageError,
    GuardTripped,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Passed => 0,
            Status::CheckFailed => 1,
            Status::UsageError => 2,
            Status::GuardTripped => 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckVerdict {
    pub name: String,
    pub family: Family,
    pub claim: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub passed: bool,
    pub guard: Option<GuardEvent>,
    pub artifacts: Vec<PathBuf>,
    pub checks: Vec<CheckVerdict>,
}

impl ScenarioSummary {
    /// `dir` is where the manifest's artifacts were written.
    pub fn from_manifest(m: &RunManifest, dir: &Path) -> Self {
        Self {
            scenario: m.scenario.clone(),
            passed: m.passed,
            guard: m.guard.clone(),
            artifacts: m.artifacts.iter().map(|a| dir.join(a)).collect(),
            checks: m
                .checks
                .iter()
                .map(|c| CheckVerdict {
                    name: c.name.clone(),
                    family: c.family,
                    claim: c.claim.clone(),
                    passed: c.passed,
                })
                .collect(),
        }
    }
}

/// Machine-readable result of a CLI invocation.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub command: String,
    pub status: Status,
    pub exit_code: i32,
    pub scenarios: Vec<ScenarioSummary>,
}

impl Summary {
    /// A guard trip anywhere outranks a failed check.
    pub fn new(command: &str, scenarios: Vec<ScenarioSummary>) -> Self {
        let status = if scenarios.iter().any(|s| s.guard.is_some()) {
            Status::GuardTripped
        } else if scenarios.iter().all(|s| s.passed) {
            Status::Passed
        } else {
            Status::CheckFailed
        };
        Self { command: command.to_string(), status, exit_code: status.code(), scenarios }
    }

    /// One line per check: `scenario,check,family,verdict`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario", "check", "family", "verdict"]).map_err(csv_err)?;
        for s in &self.scenarios {
            if let Some(g) = &s.guard {
                w.write_record([s.scenario.as_str(), "guard", "", g.reason.as_str()]).map_err(csv_err)?;
            }
            for c in &s.checks {
                let v = if c.passed { "pass" } else { "fail" };
                w.write_record([s.scenario.as_str(), &c.name, c.family.name(), v]).map_err(csv_err)?;
            }
        }
        w.into_inner().map_err(|e| crate::error::LabError::Io(e.into_error()))
    }
}
