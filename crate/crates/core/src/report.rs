//! Pass/fail/unconverged records shared by every diagnostic.

use serde::{Deserialize, Serialize};

/// Relative agreement required between the two cutoffs of a stability pair.
pub const CUTOFF_STABILITY_REL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Unconverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff_stable: Option<bool>,
    pub status: Status,
}

impl Check {
    /// Passes iff `measured <= bound`.
    pub fn le(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        let status = if measured <= bound { Status::Pass } else { Status::Fail };
        Check { name: name.into(), measured, bound, cutoff_stable: None, status }
    }

    /// Two-cutoff protocol: the fine value is asserted only when the coarse and
    /// fine measurements agree to [`CUTOFF_STABILITY_REL`].
    pub fn le_stable(name: impl Into<String>, coarse: f64, fine: f64, bound: f64) -> Self {
        let stable = cutoff_stable(coarse, fine);
        let mut check = Check::le(name, fine, bound);
        check.cutoff_stable = Some(stable);
        if !stable {
            check.status = Status::Unconverged;
        }
        check
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

pub fn cutoff_stable(coarse: f64, fine: f64) -> bool {
    let scale = coarse.abs().max(fine.abs());
    scale == 0.0 || (coarse - fine).abs() <= CUTOFF_STABILITY_REL * scale
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckReport {
    pub title: String,
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn new(title: impl Into<String>) -> Self {
        CheckReport { title: title.into(), checks: Vec::new() }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: CheckReport) {
        self.checks.extend(other.checks);
    }

    /// Fail dominates unconverged, which dominates pass.
    pub fn status(&self) -> Status {
        if self.checks.iter().any(|c| c.status == Status::Fail) {
            Status::Fail
        } else if self.checks.iter().any(|c| c.status == Status::Unconverged) {
            Status::Unconverged
        } else {
            Status::Pass
        }
    }

    pub fn passed(&self) -> bool {
        self.status() == Status::Pass
    }

    pub fn max_measured(&self) -> f64 {
        self.checks.iter().map(|c| c.measured).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}
