//! Lemma-check reports: one entry per checked invariant with its margin.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub subject: String,
    /// Hard checks fail the run; soft ones only under `--strict`.
    pub hard: bool,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
}

#[derive(Debug, Default, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl Report {
    /// Record `measured <= threshold`.
    pub fn at_most(&mut self, name: &str, subject: &str, hard: bool, measured: f64, threshold: f64) {
        self.checks.push(Check {
            name: name.into(),
            subject: subject.into(),
            hard,
            passed: measured <= threshold,
            measured,
            threshold,
        });
    }

    /// Record `measured >= threshold`.
    pub fn at_least(&mut self, name: &str, subject: &str, hard: bool, measured: f64, threshold: f64) {
        self.checks.push(Check {
            name: name.into(),
            subject: subject.into(),
            hard,
            passed: measured >= threshold,
            measured,
            threshold,
        });
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.details.insert(key.into(), v);
    }

    pub fn merge(&mut self, other: Report) {
        self.checks.extend(other.checks);
        self.details.extend(other.details);
    }

    pub fn hard_failures(&self) -> usize {
        self.checks.iter().filter(|c| c.hard && !c.passed).count()
    }

    pub fn soft_failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.hard && !c.passed).count()
    }
}
