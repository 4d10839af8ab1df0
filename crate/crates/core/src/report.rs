//! Named pass/fail checks with recorded thresholds.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Passes when `value <= threshold`.
    AtMost,
    /// Passes when `value >= threshold`.
    AtLeast,
    /// Passes when `value > threshold`.
    Above,
    /// Passes when `value == threshold`.
    Equals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, value: f64, comparison: Comparison, threshold: f64) -> Self {
        let pass = match comparison {
            Comparison::AtMost => value <= threshold,
            Comparison::AtLeast => value >= threshold,
            Comparison::Above => value > threshold,
            Comparison::Equals => value == threshold,
        };
        Self {
            name: name.into(),
            value,
            threshold,
            comparison,
            pass,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Comparison::AtMost, threshold)
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Comparison::AtLeast, threshold)
    }

    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Comparison::Above, threshold)
    }

    /// Boolean condition recorded as `1.0 == 1.0`.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Comparison::Equals, 1.0)
    }
}

pub fn all_pass(checks: &[CheckResult]) -> bool {
    checks.iter().all(|c| c.pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparisons() {
        assert!(CheckResult::at_most("r", 1e-9, 1e-8).pass);
        assert!(!CheckResult::at_most("r", f64::NAN, 1e-8).pass);
        assert!(!CheckResult::above("m", 0.0, 0.0).pass);
        assert!(CheckResult::flag("ok", true).pass);
        let c = CheckResult::at_least("s", 0.5, 0.3);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<CheckResult>(&json).unwrap(), c);
    }
}
