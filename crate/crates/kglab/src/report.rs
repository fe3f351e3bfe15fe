//! Machine-readable JSON reports: one check item per verified quantity with a
//! residual, a tolerance, and a pass flag. Serialization is deterministic
//! (fixed field order, no timestamps), so identical runs produce identical
//! bytes. The published schema lives at `schemas/report.schema.json`.

use crate::Result;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub check_name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckItem {
    /// A check that passes when `residual <= tolerance`.
    pub fn bounded(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        CheckItem {
            check_name: name.into(),
            residual,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance,
        }
    }

    /// A measured quantity reported without a hard bound.
    pub fn measured(name: impl Into<String>, value: f64) -> Self {
        CheckItem {
            check_name: name.into(),
            residual: value,
            tolerance: f64::INFINITY,
            pass: value.is_finite(),
        }
    }

    /// A check that passes when `value >= threshold` (reported as-is).
    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        CheckItem {
            check_name: name.into(),
            residual: value,
            tolerance: threshold,
            pass: value.is_finite() && value >= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub pass: bool,
    pub checks: Vec<CheckItem>,
    /// Free-form deterministic extras (fitted constants, tables).
    pub extras: serde_json::Value,
}

impl Report {
    pub fn new(command: impl Into<String>, checks: Vec<CheckItem>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Report { command: command.into(), pass, checks, extras: serde_json::Value::Null }
    }

    pub fn with_extras(mut self, extras: serde_json::Value) -> Self {
        self.extras = extras;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("report_{}.json", self.command.replace('-', "_")));
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }

    /// One line per check on stdout.
    pub fn print_summary(&self) {
        for c in &self.checks {
            let status = if c.pass { "PASS" } else { "FAIL" };
            if c.tolerance.is_infinite() {
                println!("[{status}] {:<52} measured {:.6e}", c.check_name, c.residual);
            } else {
                println!(
                    "[{status}] {:<52} {:.6e} (tol {:.1e})",
                    c.check_name, c.residual, c.tolerance
                );
            }
        }
        println!(
            "{}: {}",
            self.command,
            if self.pass { "all checks passed" } else { "CHECKS FAILED" }
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_is_deterministic_and_structured() {
        let rep = Report::new(
            "eigencheck",
            vec![
                CheckItem::bounded("orthonormality", 1e-12, 1e-10),
                CheckItem::measured("constant", 2.5),
            ],
        );
        let a = rep.to_json();
        let b = rep.to_json();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["command"], "eigencheck");
        assert_eq!(v["pass"], true);
        assert!(v["checks"].as_array().unwrap().len() == 2);
        assert_eq!(v["checks"][0]["check_name"], "orthonormality");
    }

    #[test]
    fn failing_check_fails_the_report() {
        let rep = Report::new("fgr", vec![CheckItem::bounded("gamma", 1.0, 1e-9)]);
        assert!(!rep.pass);
    }
}
