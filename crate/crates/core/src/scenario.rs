//! Scenario files: the complete, human-diffable description of one run.

use crate::faults::{ByzantineStrategy, InjectionPlan};
use crate::types::{NodeId, ParamsError, SystemParams, Value};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

fn default_step_budget() -> u64 {
    50_000
}

fn default_round_cap() -> u16 {
    30
}

fn default_channel_capacity() -> usize {
    16
}

fn default_epochs() -> u64 {
    1
}

/// One run description. Serialized as JSON with exactly these keys.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub t: usize,
    /// The application value set V.
    pub values: Vec<Value>,
    /// Proposal per node id; must cover every correct node.
    pub proposals: BTreeMap<NodeId, Value>,
    /// Adversarial nodes and their strategies; at most t entries.
    #[serde(default)]
    pub byzantine: BTreeMap<NodeId, ByzantineStrategy>,
    /// Transient fault applied at the start of the first epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<InjectionPlan>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step_budget")]
    pub step_budget: u64,
    #[serde(default = "default_round_cap")]
    pub round_cap: u16,
    #[serde(default = "default_channel_capacity")]
    pub channel_capacity: usize,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("scenario is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("value set must not be empty")]
    EmptyValueSet,
    #[error("node id {0} is out of range")]
    NodeOutOfRange(NodeId),
    #[error("{0} Byzantine nodes exceed the bound t={1}")]
    TooManyByzantine(usize, usize),
    #[error("correct node {0} has no proposal")]
    MissingProposal(NodeId),
    #[error("proposal for node {0} is outside the value set")]
    ProposalOutsideValues(NodeId),
    #[error("step budget must be positive")]
    ZeroBudget,
    #[error("epochs must be positive")]
    ZeroEpochs,
    #[error("channel capacity must be positive")]
    ZeroCapacity,
    #[error("injection targets Byzantine or unknown node {0}")]
    BadInjectionTarget(NodeId),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn params(&self) -> Result<SystemParams, ParamsError> {
        SystemParams::new(self.n, self.t)
    }

    pub fn value_set(&self) -> BTreeSet<Value> {
        self.values.iter().cloned().collect()
    }

    pub fn is_byzantine(&self, id: NodeId) -> bool {
        self.byzantine.contains_key(&id)
    }

    pub fn correct_ids(&self) -> Vec<NodeId> {
        (0..self.n as u16)
            .map(NodeId)
            .filter(|id| !self.is_byzantine(*id))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let params = self.params()?;
        if self.values.is_empty() {
            return Err(ScenarioError::EmptyValueSet);
        }
        if self.step_budget == 0 {
            return Err(ScenarioError::ZeroBudget);
        }
        if self.epochs == 0 {
            return Err(ScenarioError::ZeroEpochs);
        }
        if self.channel_capacity == 0 {
            return Err(ScenarioError::ZeroCapacity);
        }
        let values = self.value_set();
        for id in self.proposals.keys().chain(self.byzantine.keys()) {
            if !params.contains(*id) {
                return Err(ScenarioError::NodeOutOfRange(*id));
            }
        }
        if self.byzantine.len() > self.t {
            return Err(ScenarioError::TooManyByzantine(
                self.byzantine.len(),
                self.t,
            ));
        }
        for id in self.correct_ids() {
            match self.proposals.get(&id) {
                None => return Err(ScenarioError::MissingProposal(id)),
                Some(v) if !values.contains(v) => {
                    return Err(ScenarioError::ProposalOutsideValues(id))
                }
                Some(_) => {}
            }
        }
        for (id, v) in &self.proposals {
            if !values.contains(v) {
                return Err(ScenarioError::ProposalOutsideValues(*id));
            }
        }
        if let Some(plan) = &self.injection {
            for target in &plan.targets {
                if !params.contains(*target) || self.is_byzantine(*target) {
                    return Err(ScenarioError::BadInjectionTarget(*target));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Scenario {
        Scenario {
            n: 4,
            t: 1,
            values: vec![Value::from("a"), Value::from("b")],
            proposals: (0..4).map(|i| (NodeId(i), Value::from("a"))).collect(),
            byzantine: BTreeMap::new(),
            injection: None,
            seed: 1,
            step_budget: 50_000,
            round_cap: 30,
            channel_capacity: 16,
            epochs: 1,
        }
    }

    #[test]
    fn round_trips_through_json() {
        let s = minimal();
        let parsed = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(parsed, s);
    }

    #[test]
    fn rejects_bad_resilience() {
        let mut s = minimal();
        s.n = 3;
        assert!(matches!(s.validate(), Err(ScenarioError::Params(_))));
    }

    #[test]
    fn rejects_missing_proposal() {
        let mut s = minimal();
        s.proposals.remove(&NodeId(2));
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::MissingProposal(NodeId(2)))
        ));
    }

    #[test]
    fn rejects_proposal_outside_values() {
        let mut s = minimal();
        s.proposals.insert(NodeId(0), Value::from("zzz"));
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::ProposalOutsideValues(_))
        ));
    }

    #[test]
    fn rejects_too_many_byzantine() {
        let mut s = minimal();
        s.byzantine.insert(NodeId(0), ByzantineStrategy::Silent);
        s.byzantine.insert(NodeId(1), ByzantineStrategy::Silent);
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::TooManyByzantine(2, 1))
        ));
    }

    #[test]
    fn byzantine_nodes_need_no_proposal() {
        let mut s = minimal();
        s.byzantine.insert(NodeId(3), ByzantineStrategy::Silent);
        s.proposals.remove(&NodeId(3));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"{"n":4,"t":1,"values":["a"],"proposals":{},"bogus":1}"#;
        assert!(Scenario::from_json(text).is_err());
    }
}
