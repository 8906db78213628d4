//! Scenario driver: builds worlds, runs epochs to a stabilized completion,
//! evaluates the property catalog, and recycles between epochs.

use crate::event::{BvScope, ProtoEvent};
use crate::faults::{apply_injection, ByzantineNode, ByzantineStrategy, InjectionError};
use crate::mvc::MvcNode;
use crate::node::Behavior;
use crate::properties::{check_all, EpochObservations};
use crate::recycler;
use crate::reference::RefNode;
use crate::report::{EpochReport, Report, Verdict, VerdictStatus};
use crate::scenario::{Scenario, ScenarioError};
use crate::simnet::{epoch_coin_seed, SimWorld, StepStatus, TraceKind, TraceRecord, WorldConfig};
use crate::types::{NodeId, Outcome, Value};
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Injection(#[from] InjectionError),
    #[error("the reference stack is not self-stabilizing and rejects injection plans")]
    ReferenceWithInjection,
}

/// Extra steps granted after completion so outcomes can stabilize before
/// they are judged; re-evaluations of the result query settle within this
/// horizon on every schedule the suite explores.
fn settle_window(n: usize) -> u64 {
    (16 * n * n) as u64
}

const SETTLE_BUDGET: u64 = 25_000;

pub fn build_world(scenario: &Scenario, reference: bool) -> Result<SimWorld, ScenarioError> {
    scenario.validate()?;
    let params = scenario.params()?;
    let value_set = scenario.value_set();
    let coin_seed = epoch_coin_seed(scenario.seed, 0);
    let behaviors = (0..scenario.n as u16)
        .map(NodeId)
        .map(|id| match scenario.byzantine.get(&id) {
            Some(strategy) => Behavior::Byzantine(ByzantineNode::new(
                strategy.clone(),
                scenario.proposals.get(&id).cloned(),
                id,
                params,
                value_set.clone(),
                scenario.round_cap,
                coin_seed,
            )),
            None if reference => Behavior::Reference(RefNode::new(
                id,
                params,
                value_set.clone(),
                scenario.round_cap,
                coin_seed,
            )),
            None => Behavior::Correct(MvcNode::new(
                id,
                params,
                value_set.clone(),
                scenario.round_cap,
                coin_seed,
            )),
        })
        .collect();
    Ok(SimWorld::new(
        WorldConfig {
            params,
            channel_capacity: scenario.channel_capacity,
            seed: scenario.seed,
            round_cap: scenario.round_cap,
            value_set,
        },
        behaviors,
    ))
}

/// Invoke the propose operation on every node the scenario says proposes.
pub fn propose_all(world: &mut SimWorld, scenario: &Scenario) {
    let params = world.params();
    for id in params.node_ids() {
        let value = match scenario.byzantine.get(&id) {
            Some(ByzantineStrategy::CollusionValue { value }) => Some(value.clone()),
            Some(_) => None,
            None => scenario.proposals.get(&id).cloned(),
        };
        if let Some(v) = value {
            let mut events = Vec::new();
            let outs = world.nodes[id.index()].propose(&v, &params, &mut events);
            for event in events {
                world.events.push(crate::event::StampedEvent {
                    step: world.clock,
                    node: id,
                    event,
                });
            }
            world.enqueue_outputs(id, outs);
            let step = world.clock;
            world.record(TraceRecord {
                step,
                kind: TraceKind::Inject,
                src: Some(id),
                dst: None,
                protocol: None,
                summary: format!("propose({v})"),
            });
        }
    }
}

/// Milestones that must go quiet before an epoch counts as stabilized.
fn is_settling_milestone(event: &ProtoEvent) -> bool {
    matches!(
        event,
        ProtoEvent::BrbBroadcast { .. }
            | ProtoEvent::BrbDelivered { .. }
            | ProtoEvent::BcProposed { .. }
            | ProtoEvent::BcDecided { .. }
            | ProtoEvent::BvInput {
                scope: BvScope::Consensus,
                ..
            }
            | ProtoEvent::BinValue {
                scope: BvScope::Consensus,
                ..
            }
    )
}

struct EpochDrive {
    completed: bool,
    steps_to_completion: Option<u64>,
    steps_total: u64,
    result_flips: u64,
    outcomes: BTreeMap<NodeId, Outcome<Value>>,
}

fn drive_epoch(world: &mut SimWorld, budget: u64) -> EpochDrive {
    let n = world.params().n();
    let window = settle_window(n);
    let start_clock = world.clock;
    let mut completed_at: Option<u64> = None;
    let mut result_flips = 0u64;
    let mut event_cursor = world.events.len();
    let mut last_change_step = 0u64;
    let mut prev_results: Vec<Option<Outcome<Value>>> = world.results();

    loop {
        let steps = world.clock - start_clock;

        // Milestone progress resets the settling clock.
        while event_cursor < world.events.len() {
            if is_settling_milestone(&world.events[event_cursor].event) {
                last_change_step = steps;
            }
            event_cursor += 1;
        }

        let results = world.results();
        if results != prev_results {
            for (old, new) in prev_results.iter().zip(&results) {
                if let (Some(old), Some(new)) = (old, new) {
                    if !old.is_pending() && !new.is_pending() && old != new {
                        result_flips += 1;
                    }
                }
            }
            last_change_step = steps;
            prev_results = results;
        }

        let comp = prev_results
            .iter()
            .flatten()
            .all(|r| !r.is_pending())
            && prev_results.iter().any(Option::is_some);
        if comp && completed_at.is_none() {
            completed_at = Some(steps);
        }

        let done = match completed_at {
            None => steps >= budget,
            Some(_) => {
                (comp && steps.saturating_sub(last_change_step) >= window)
                    || steps >= budget + SETTLE_BUDGET
            }
        };
        if done {
            let outcomes = world
                .nodes
                .iter()
                .filter_map(|slot| slot.result().map(|r| (slot.id, r)))
                .collect();
            return EpochDrive {
                completed: comp,
                steps_to_completion: completed_at,
                steps_total: steps,
                result_flips,
                outcomes,
            };
        }
        if world.step() == StepStatus::Quiescent {
            let outcomes = world
                .nodes
                .iter()
                .filter_map(|slot| slot.result().map(|r| (slot.id, r)))
                .collect();
            return EpochDrive {
                completed: comp,
                steps_to_completion: completed_at,
                steps_total: steps,
                result_flips,
                outcomes,
            };
        }
    }
}

/// Run every epoch of a scenario on the self-stabilizing stack and evaluate
/// the full property catalog.
pub fn run_scenario(scenario: &Scenario) -> Result<Report, RunnerError> {
    let mut world = build_world(scenario, false)?;
    let mut epochs = Vec::new();
    let correct = scenario.correct_ids();
    let correct_proposals: BTreeMap<NodeId, Value> = scenario
        .proposals
        .iter()
        .filter(|(id, _)| !scenario.is_byzantine(**id))
        .map(|(id, v)| (*id, v.clone()))
        .collect();

    for epoch_index in 0..scenario.epochs {
        let injected = epoch_index == 0 && scenario.injection.is_some();
        let drops_before = world.drop_count;
        let anomalies_before = world.anomaly_count;
        let events_before = world.events.len();

        if injected {
            apply_injection(&mut world, scenario.injection.as_ref().expect("checked"))?;
        }
        propose_all(&mut world, scenario);
        let drive = drive_epoch(&mut world, scenario.step_budget);

        let obs = EpochObservations {
            world: &world,
            events: &world.events[events_before..],
            injected,
            completed: drive.completed,
            correct: &correct,
            correct_proposals: &correct_proposals,
            outcomes: &drive.outcomes,
        };
        let verdicts = check_all(&obs);
        epochs.push(EpochReport {
            epoch: epoch_index,
            injected,
            completed: drive.completed,
            steps_to_completion: drive.steps_to_completion,
            steps_total: drive.steps_total,
            outcomes: drive.outcomes,
            verdicts,
            drops: world.drop_count - drops_before,
            anomalies: world.anomaly_count - anomalies_before,
            result_flips: drive.result_flips,
        });

        if epoch_index + 1 < scenario.epochs {
            if recycler::recycle(&mut world).is_err() {
                break;
            }
        }
    }

    let pass = epochs.iter().all(|e| {
        e.completed && e.verdicts.values().all(Verdict::passed)
    }) && epochs.len() == scenario.epochs as usize;
    Ok(Report {
        seed: scenario.seed,
        epochs,
        pass,
    })
}

/// Run the blocking-style reference stack on the same network model.
pub fn run_reference(scenario: &Scenario) -> Result<Report, RunnerError> {
    if scenario.injection.is_some() {
        return Err(RunnerError::ReferenceWithInjection);
    }
    let mut world = build_world(scenario, true)?;
    let mut epochs = Vec::new();
    for epoch_index in 0..scenario.epochs {
        let drops_before = world.drop_count;
        let anomalies_before = world.anomaly_count;
        propose_all(&mut world, scenario);
        let drive = drive_epoch(&mut world, scenario.step_budget);

        // The reference stack gets a minimal verdict set: it exists to be
        // compared against, not to re-prove the full catalog.
        let mut verdicts = BTreeMap::new();
        verdicts.insert(
            "reference_agreement".to_string(),
            reference_agreement(&drive.outcomes),
        );
        verdicts.insert(
            "reference_completion".to_string(),
            if drive.completed {
                Verdict::pass()
            } else {
                Verdict::fail("budget exhausted".to_string())
            },
        );
        epochs.push(EpochReport {
            epoch: epoch_index,
            injected: false,
            completed: drive.completed,
            steps_to_completion: drive.steps_to_completion,
            steps_total: drive.steps_total,
            outcomes: drive.outcomes,
            verdicts,
            drops: world.drop_count - drops_before,
            anomalies: world.anomaly_count - anomalies_before,
            result_flips: drive.result_flips,
        });
        if epoch_index + 1 < scenario.epochs {
            if recycler::recycle(&mut world).is_err() {
                break;
            }
        }
    }
    let pass = epochs.iter().all(|e| {
        e.completed && e.verdicts.values().all(Verdict::passed)
    }) && epochs.len() == scenario.epochs as usize;
    Ok(Report {
        seed: scenario.seed,
        epochs,
        pass,
    })
}

fn reference_agreement(outcomes: &BTreeMap<NodeId, Outcome<Value>>) -> Verdict {
    let mut first: Option<(&NodeId, &Outcome<Value>)> = None;
    for (node, outcome) in outcomes {
        if outcome.is_pending() {
            continue;
        }
        match &first {
            None => first = Some((node, outcome)),
            Some((other, expected)) if *expected != outcome => {
                return Verdict::fail(format!(
                    "{other} returned {expected} but {node} returned {outcome}"
                ))
            }
            Some(_) => {}
        }
    }
    Verdict::pass()
}

/// Differential comparison of the two stacks on one scenario.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct DiffReport {
    pub seed: u64,
    pub consistent: bool,
    pub detail: String,
    pub ssbft_outcomes: BTreeMap<NodeId, Outcome<Value>>,
    pub reference_outcomes: BTreeMap<NodeId, Outcome<Value>>,
}

pub fn run_diff(scenario: &Scenario) -> Result<DiffReport, RunnerError> {
    if scenario.injection.is_some() {
        return Err(RunnerError::ReferenceWithInjection);
    }
    let ssbft = run_scenario(scenario)?;
    let reference = run_reference(scenario)?;
    let ssbft_outcomes = ssbft
        .epochs
        .first()
        .map(|e| e.outcomes.clone())
        .unwrap_or_default();
    let reference_outcomes = reference
        .epochs
        .first()
        .map(|e| e.outcomes.clone())
        .unwrap_or_default();

    let correct_values: Vec<&Value> = scenario
        .proposals
        .iter()
        .filter(|(id, _)| !scenario.is_byzantine(**id))
        .map(|(_, v)| v)
        .collect();
    let unanimous = correct_values
        .first()
        .filter(|v| correct_values.iter().all(|w| w == *v))
        .copied();

    let legal = |outcome: &Outcome<Value>| -> bool {
        match outcome {
            Outcome::Pending => false,
            Outcome::Error => unanimous.is_none(),
            Outcome::Decided(v) => match unanimous {
                Some(u) => v == u,
                None => correct_values.contains(&v),
            },
        }
    };

    let mut detail = String::new();
    let mut consistent = true;
    for (label, outcomes) in [("ssbft", &ssbft_outcomes), ("reference", &reference_outcomes)] {
        let distinct: std::collections::BTreeSet<&Outcome<Value>> = outcomes.values().collect();
        if distinct.len() != 1 {
            consistent = false;
            detail.push_str(&format!("{label} stack did not agree internally; "));
            continue;
        }
        let outcome = *distinct.iter().next().expect("one element");
        if !legal(outcome) {
            consistent = false;
            detail.push_str(&format!(
                "{label} outcome {outcome} is outside the legal set; "
            ));
        }
    }
    if detail.is_empty() {
        detail = "both stacks within the legal outcome set".to_string();
    }
    Ok(DiffReport {
        seed: scenario.seed,
        consistent,
        detail,
        ssbft_outcomes,
        reference_outcomes,
    })
}

/// Run the same scenario across a seed range in parallel.
pub fn sweep(scenario: &Scenario, seeds: std::ops::Range<u64>) -> Vec<(u64, Report)> {
    let mut results: Vec<(u64, Report)> = seeds
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            let mut s = scenario.clone();
            s.seed = seed;
            let report = run_scenario(&s).expect("validated scenario");
            (seed, report)
        })
        .collect();
    results.sort_by_key(|(seed, _)| *seed);
    results
}

/// Summarize a sweep into one pass flag and the failing seeds.
pub fn sweep_failures(results: &[(u64, Report)]) -> Vec<u64> {
    results
        .iter()
        .filter(|(_, r)| !r.pass)
        .map(|(s, _)| *s)
        .collect()
}

/// True when every verdict with the given name passed across a sweep.
pub fn sweep_property_holds(results: &[(u64, Report)], property: &str) -> bool {
    results.iter().all(|(_, report)| {
        report.epochs.iter().all(|e| {
            e.verdicts
                .get(property)
                .map(|v| !matches!(v.status, VerdictStatus::Fail))
                .unwrap_or(false)
        })
    })
}
