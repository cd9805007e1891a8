//! Property suites and convergence studies packaged as reports with named
//! pass/fail checks.

mod studies;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::stats::PowerFit;

pub use studies::*;

/// Thresholds used by the checks. Every field can be overridden from a run
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub flux_null: f64,
    pub stationarity: f64,
    pub formulation_agreement: f64,
    pub solver_tolerance: f64,
    pub solver_multiple: f64,
    pub lambda_order: f64,
    pub eps_order_linear: f64,
    pub eps_order_interacting: f64,
    pub refinement_change: f64,
    pub tail_order: f64,
    pub weighted_symmetry: f64,
    pub off_degree: f64,
    pub null_space: f64,
    pub pd_ratio: f64,
    pub psi_zero: f64,
    pub psi_integral: f64,
    pub psi_match: f64,
    pub standard_errors: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            flux_null: 1e-10,
            stationarity: 1e-8,
            formulation_agreement: 1e-12,
            solver_tolerance: 1e-10,
            solver_multiple: 10.0,
            lambda_order: 1.8,
            eps_order_linear: 1.7,
            eps_order_interacting: 1.5,
            refinement_change: 0.2,
            tail_order: 1.7,
            weighted_symmetry: 1e-10,
            off_degree: 1e-13,
            null_space: 1e-10,
            pd_ratio: 1e-8,
            psi_zero: 1e-12,
            psi_integral: 1e-12,
            psi_match: 1e-9,
            standard_errors: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Passes when `value <= threshold`.
    AtMost,
    /// Passes when `value >= threshold`.
    AtLeast,
}

/// One named assertion against a named tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub tolerance: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

impl Check {
    pub fn new(name: &str, tolerance: &str, value: f64, comparison: Comparison, threshold: f64) -> Self {
        let passed = match comparison {
            Comparison::AtMost => value <= threshold,
            Comparison::AtLeast => value >= threshold,
        };
        Self { name: name.into(), tolerance: tolerance.into(), value, threshold, comparison, passed }
    }

    pub fn describe(&self) -> String {
        let op = match self.comparison {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
        };
        format!("{} = {:e} {op} {:e} [{}]", self.name, self.value, self.threshold, self.tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: String,
    /// Digest of the inputs the study ran on.
    pub inputs_digest: String,
    /// Named `(parameter, value)` series.
    pub series: BTreeMap<String, Vec<(f64, f64)>>,
    pub fits: BTreeMap<String, PowerFit>,
    pub checks: Vec<Check>,
    /// Extra files (name, contents), such as matrix dumps on failure.
    #[serde(skip)]
    pub attachments: Vec<(String, String)>,
}

impl StudyReport {
    pub fn new(study: &str, inputs: &str) -> Self {
        Self {
            study: study.into(),
            inputs_digest: digest(inputs),
            series: BTreeMap::new(),
            fits: BTreeMap::new(),
            checks: Vec::new(),
            attachments: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn push_check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn series_mut(&mut self, name: &str) -> &mut Vec<(f64, f64)> {
        self.series.entry(name.to_string()).or_default()
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Hex SHA-256 of a string.
pub fn digest(s: &str) -> String {
    let mut h = Sha256::new();
    h.update(s.as_bytes());
    h.finalize().iter().fold(String::with_capacity(64), |mut out, b| {
        let _ = write!(out, "{b:02x}");
        out
    })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// JUnit-style XML with one test case per check.
pub fn junit_xml(reports: &[StudyReport]) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<testsuites>\n");
    for r in reports {
        let failures = r.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(
            out,
            "  <testsuite name=\"{}\" tests=\"{}\" failures=\"{failures}\">",
            xml_escape(&r.study),
            r.checks.len()
        );
        for c in &r.checks {
            let _ = write!(out, "    <testcase classname=\"{}\" name=\"{}\"", xml_escape(&r.study), xml_escape(&c.name));
            if c.passed {
                out.push_str("/>\n");
            } else {
                let _ = writeln!(out, ">\n      <failure message=\"{}\"/>\n    </testcase>", xml_escape(&c.describe()));
            }
        }
        out.push_str("  </testsuite>\n");
    }
    out.push_str("</testsuites>\n");
    out
}
