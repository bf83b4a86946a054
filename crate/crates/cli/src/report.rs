use std::fmt;

use serde::Serialize;
use serde_json::Value;

/// Acceptance bound attached to a reported number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within([f64; 2]),
}

impl Bound {
    pub fn admits(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(t) => v <= t,
            Bound::AtLeast(t) => v >= t,
            Bound::Within([lo, hi]) => v >= lo && v <= hi,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(t) => write!(f, "<= {t:e}"),
            Bound::AtLeast(t) => write!(f, ">= {t}"),
            Bound::Within([lo, hi]) => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: Bound,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub data: Value,
}

impl Report {
    pub fn new(command: &str, scenario: &str, config_hash: String, seed: u64) -> Self {
        Report {
            command: command.into(),
            scenario: scenario.into(),
            config_hash,
            seed,
            passed: true,
            checks: Vec::new(),
            artifacts: Vec::new(),
            data: Value::Object(Default::default()),
        }
    }

    pub fn check(&mut self, name: impl Into<String>, value: f64, tolerance: Bound) {
        let passed = tolerance.admits(value);
        self.passed &= passed;
        self.checks.push(Check {
            name: name.into(),
            value,
            tolerance,
            passed,
        });
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        if let Value::Object(m) = &mut self.data {
            m.insert(key.into(), serde_json::to_value(value).expect("report data serializes"));
        }
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} [{}] config {}\n", self.command, self.scenario, &self.config_hash[..12]);
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("  {tag} {}: {:.6e} ({})\n", c.name, c.value, c.tolerance));
        }
        for a in &self.artifacts {
            out.push_str(&format!("  wrote {a}\n"));
        }
        out.push_str(if self.passed { "all checks passed\n" } else { "some checks failed\n" });
        out
    }
}

/// Comma-separated rows with 17 significant digits.
pub fn csv_row(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    cells.join(",")
}
