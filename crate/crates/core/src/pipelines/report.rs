use serde::{Deserialize, Serialize};

/// Longest list of offending cells kept per check.
pub const MAX_LISTED_CELLS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// A measurement recorded for comparison with a published figure; it
    /// never fails the report.
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    /// Measured deviation (or the measured value for recorded entries).
    pub deviation: f64,
    pub tolerance: f64,
    pub detail: String,
    /// Number of offending cells; only the first few are listed.
    pub offending_count: usize,
    pub offending: Vec<String>,
}

impl Check {
    /// A pass/fail check: passes when `deviation <= tolerance` and nothing
    /// is offending.
    pub fn measured(
        name: impl Into<String>,
        deviation: f64,
        tolerance: f64,
        detail: impl Into<String>,
        offending: Vec<String>,
    ) -> Self {
        let ok = deviation.is_finite() && deviation <= tolerance && offending.is_empty();
        let offending_count = offending.len();
        Self {
            name: name.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            deviation,
            tolerance,
            detail: detail.into(),
            offending_count,
            offending: offending.into_iter().take(MAX_LISTED_CELLS).collect(),
        }
    }

    pub fn recorded(name: impl Into<String>, value: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Recorded,
            deviation: value,
            tolerance: f64::NAN,
            detail: detail.into(),
            offending_count: 0,
            offending: Vec::new(),
        }
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && !self.checks.iter().any(Check::failed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.failed())
    }

    pub fn to_json(&self) -> String {
        // NaN tolerances of recorded entries serialize as null
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
