//! Machine-readable run reports. Serialization is fully deterministic:
//! identical `(scenario, seed)` pairs produce byte-identical reports.

use crate::types::{NodeId, Outcome, Value};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Pass,
    Fail,
    /// The property does not apply to this epoch (e.g. closure checks on an
    /// epoch that started from injected state).
    Skipped,
}

/// Outcome of one named property check.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// On failure: a minimal witness (step, nodes, values).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

impl Verdict {
    pub fn pass() -> Self {
        Verdict {
            status: VerdictStatus::Pass,
            witness: None,
        }
    }

    pub fn fail(witness: String) -> Self {
        Verdict {
            status: VerdictStatus::Fail,
            witness: Some(witness),
        }
    }

    pub fn skipped(reason: &str) -> Self {
        Verdict {
            status: VerdictStatus::Skipped,
            witness: Some(reason.to_string()),
        }
    }

    pub fn passed(&self) -> bool {
        !matches!(self.status, VerdictStatus::Fail)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    /// The epoch started from injected (corrupted) state.
    pub injected: bool,
    /// All deliverable results left pending within the step budget.
    pub completed: bool,
    /// Steps from epoch start until completion was first observed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_to_completion: Option<u64>,
    /// Steps consumed by the epoch in total (including settling).
    pub steps_total: u64,
    /// Stabilized outcome per correct node.
    pub outcomes: BTreeMap<NodeId, Outcome<Value>>,
    /// Named property verdicts.
    pub verdicts: BTreeMap<String, Verdict>,
    pub drops: u64,
    pub anomalies: u64,
    /// Non-pending result flips observed while the epoch settled
    /// (error-to-decided re-evaluations; see the agreement property for the
    /// divergence check).
    pub result_flips: u64,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub epochs: Vec<EpochReport>,
    pub pass: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failures(&self) -> Vec<(u64, String, String)> {
        let mut out = Vec::new();
        for epoch in &self.epochs {
            for (name, verdict) in &epoch.verdicts {
                if !verdict.passed() {
                    out.push((
                        epoch.epoch,
                        name.clone(),
                        verdict.witness.clone().unwrap_or_default(),
                    ));
                }
            }
        }
        out
    }
}
