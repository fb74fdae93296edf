use serde::{Deserialize, Serialize};

/// Outcome of sampling one analytic inequality `lhs <= C * rhs`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundEntry {
    pub name: String,
    /// Smallest constant `C` that makes every sampled instance hold.
    pub max_ratio: f64,
    pub samples: usize,
    /// Samples whose ratio exceeded the stated constant (if one is stated).
    pub violations: usize,
    /// Samples drawn but rejected as outside the admissible parameter range.
    pub rejected: usize,
    pub stated_constant: Option<f64>,
}

impl BoundEntry {
    pub fn new(name: impl Into<String>, stated_constant: Option<f64>) -> Self {
        Self {
            name: name.into(),
            max_ratio: 0.0,
            samples: 0,
            violations: 0,
            rejected: 0,
            stated_constant,
        }
    }

    pub fn record(&mut self, ratio: f64) {
        self.samples += 1;
        if ratio.is_nan() {
            self.max_ratio = f64::NAN;
            return;
        }
        if ratio > self.max_ratio || !ratio.is_finite() {
            self.max_ratio = self.max_ratio.max(ratio);
        }
        if let Some(c) = self.stated_constant {
            if ratio > c * (1.0 + 1e-9) {
                self.violations += 1;
            }
        }
    }

    /// The constant is finite and, if one was stated, never exceeded.
    pub fn holds(&self) -> bool {
        self.max_ratio.is_finite() && self.violations == 0
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct BoundReport {
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    pub fn get(&self, name: &str) -> Option<&BoundEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn all_hold(&self) -> bool {
        self.entries.iter().all(BoundEntry::holds)
    }
}
