use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "SKIPPED")]
    Skipped,
}

/// How `value` is compared with `threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">")]
    Above,
}

impl Bound {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Bound::AtMost => value <= threshold,
            Bound::AtLeast => value >= threshold,
            Bound::Below => value < threshold,
            Bound::Above => value > threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
            Bound::Below => "<",
            Bound::Above => ">",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check_id: String,
    /// The statement the check tests.
    pub anchor: String,
    pub instance: String,
    /// Residual, eigenvalue or count; `None` when skipped or errored.
    pub value: Option<f64>,
    pub threshold: f64,
    pub bound: Bound,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "serde_json::Value::is_null", default)]
    pub detail: serde_json::Value,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub seed: u64,
    pub config: RunConfig,
    pub summary: Summary,
    pub checks: Vec<CheckRecord>,
    /// Set when the run stopped early; the checks listed are those that finished.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl Report {
    pub fn new(config: RunConfig, checks: Vec<CheckRecord>) -> Self {
        let mut summary = Summary { total: checks.len(), ..Default::default() };
        for c in &checks {
            match c.status {
                Status::Pass => summary.passed += 1,
                Status::Fail => summary.failed += 1,
                Status::Skipped => summary.skipped += 1,
            }
        }
        Report { schema: SCHEMA, seed: config.seed, config, summary, checks, aborted: None }
    }

    pub fn all_passed(&self) -> bool {
        self.summary.failed == 0 && self.aborted.is_none()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json().map_err(std::io::Error::other)?)
    }

    /// The report with wall times zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Report {
        let mut r = self.clone();
        for c in &mut r.checks {
            c.wall_time_s = 0.0;
        }
        r
    }

    /// One line per check.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skipped => "SKIP",
            };
            let value = c.value.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{status:4} {:<44} {:<9} {value:>10} {} {:.1e}  {:.2}s",
                c.check_id,
                c.instance,
                c.bound.symbol(),
                c.threshold,
                c.wall_time_s
            ));
            if let Some(r) = &c.reason {
                s.push_str(&format!("  ({r})"));
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "{} checks: {} passed, {} failed, {} skipped\n",
            self.summary.total, self.summary.passed, self.summary.failed, self.summary.skipped
        ));
        s
    }
}
