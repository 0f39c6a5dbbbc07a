use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Not a failure, but needs a look (e.g. Monte Carlo replicates that did not converge).
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub stderr: Option<f64>,
    pub status: Status,
    pub detail: String,
}

impl Check {
    /// Passes when `|observed - target| <= tolerance`.
    pub fn within(name: &str, observed: f64, target: f64, tolerance: f64, stderr: Option<f64>) -> Check {
        let ok = (observed - target).abs() <= tolerance;
        Check {
            name: name.into(),
            observed,
            target: Some(target),
            tolerance: Some(tolerance),
            stderr,
            status: if ok { Status::Pass } else { Status::Fail },
            detail: String::new(),
        }
    }

    pub fn holds(name: &str, ok: bool, observed: f64, detail: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            observed,
            target: None,
            tolerance: None,
            stderr: None,
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }

    /// A reported quantity with nothing to compare against.
    pub fn info(name: &str, observed: f64, stderr: Option<f64>) -> Check {
        Check {
            name: name.into(),
            observed,
            target: None,
            tolerance: None,
            stderr,
            status: Status::Pass,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Check {
        self.detail = detail.into();
        self
    }

    /// Downgrades a failure to a flag.
    pub fn flag_if(mut self, cond: bool) -> Check {
        if cond {
            self.status = Status::Flagged;
        }
        self
    }

    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Flagged => "FLAG",
        };
        let mut s = format!("{tag} {}: observed={:.6}", self.name, self.observed);
        if let Some(se) = self.stderr {
            s += &format!(" (se {se:.2e})");
        }
        if let (Some(t), Some(tol)) = (self.target, self.tolerance) {
            s += &format!(" target={t:.6} tol={tol:.3e}");
        }
        if !self.detail.is_empty() {
            s += &format!(" [{}]", self.detail);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub experiment: String,
    pub seed: u64,
    pub profile: String,
    pub checks: Vec<Check>,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
    /// Run-specific numbers that later runs may read back (e.g. the mechanism of a bank).
    pub summary: serde_json::Value,
    /// Wall-clock metadata; the only part of the report that differs between identical runs.
    pub timing: Timing,
}

impl StatReport {
    pub fn new(cfg: &ExperimentConfig) -> StatReport {
        StatReport {
            experiment: cfg.experiment.name().into(),
            seed: cfg.seed,
            profile: cfg.profile.name().into(),
            checks: Vec::new(),
            artifacts: Vec::new(),
            summary: serde_json::Value::Null,
            timing: Timing { elapsed_seconds: 0.0 },
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    /// 0 when nothing failed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}
