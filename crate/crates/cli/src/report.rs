//! Check lines and machine-readable reports.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    /// Comparison applied: measured `op` bound.
    pub op: String,
    pub pass: bool,
}

impl CheckLine {
    pub fn le(name: &str, measured: f64, bound: f64) -> Self {
        CheckLine {
            name: name.into(),
            measured,
            bound,
            op: "<=".into(),
            pass: measured <= bound,
        }
    }

    pub fn ge(name: &str, measured: f64, bound: f64) -> Self {
        CheckLine {
            name: name.into(),
            measured,
            bound,
            op: ">=".into(),
            pass: measured >= bound,
        }
    }

    pub fn print(&self) {
        println!(
            "{} {} measured={:e} bound{}{:e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.op,
            self.bound
        );
    }
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckLine>,
}

impl SuiteReport {
    pub fn new(suite: &str, checks: Vec<CheckLine>) -> Self {
        SuiteReport {
            suite: suite.into(),
            passed: checks.iter().all(|c| c.pass),
            checks,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n").map_err(CliError::Io)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(CliError::Io)
}
