//! Trace checkers: one verdict per named property of the broadcast and
//! consensus layers.
//!
//! Liveness-flavored properties (the completion family) are judged on every
//! epoch, including those that start from injected state — recovering from
//! such states is exactly what they claim. Safety/closure properties are
//! judged only on epochs that started post-recycling, which is the premise
//! they carry; on injected epochs they report as skipped.

use crate::brb::BrbTag;
use crate::codec::VbbPhase;
use crate::event::{BvScope, ProtoEvent, StampedEvent};
use crate::report::Verdict;
use crate::simnet::SimWorld;
use crate::types::{NodeId, Outcome, Value};
use std::collections::{BTreeMap, BTreeSet};

pub struct EpochObservations<'a> {
    pub world: &'a SimWorld,
    /// Events stamped during this epoch only.
    pub events: &'a [StampedEvent],
    /// The epoch began from injected (corrupted) state.
    pub injected: bool,
    /// All deliverable results left pending within the budget.
    pub completed: bool,
    pub correct: &'a [NodeId],
    /// Proposals of the correct nodes.
    pub correct_proposals: &'a BTreeMap<NodeId, Value>,
    /// Stabilized result per correct node.
    pub outcomes: &'a BTreeMap<NodeId, Outcome<Value>>,
}

impl<'a> EpochObservations<'a> {
    fn is_correct(&self, id: NodeId) -> bool {
        self.correct.contains(&id)
    }

    fn unanimous_proposal(&self) -> Option<&Value> {
        let mut iter = self.correct_proposals.values();
        let first = iter.next()?;
        iter.all(|v| v == first).then_some(first)
    }

    /// Final delivered payload of `(phase, sender)` at a correct node.
    fn delivered_at(&self, node: NodeId, tag: BrbTag) -> Option<Vec<u8>> {
        let mvc = self.world.nodes[node.index()].correct()?;
        mvc.vbb.brb[tag.phase.index()][tag.sender.index()]
            .as_ref()
            .and_then(|inst| inst.delivered().map(<[u8]>::to_vec))
    }

    /// Tags any correct node is broadcasting, with the payload it committed to.
    fn correct_broadcasts(&self) -> BTreeMap<BrbTag, Vec<u8>> {
        let mut out = BTreeMap::new();
        for &id in self.correct {
            if let Some(mvc) = self.world.nodes[id.index()].correct() {
                for phase in VbbPhase::ALL {
                    if let Some(inst) = &mvc.vbb.brb[phase.index()][id.index()] {
                        if let Some(payload) = &inst.my_init {
                            out.insert(BrbTag { phase, sender: id }, payload.clone());
                        }
                    }
                }
            }
        }
        out
    }

    fn all_tags(&self) -> Vec<BrbTag> {
        let mut tags = Vec::new();
        for phase in VbbPhase::ALL {
            for sender in self.world.params().node_ids() {
                tags.push(BrbTag { phase, sender });
            }
        }
        tags
    }

    fn bin_values_at(&self, node: NodeId) -> BTreeSet<bool> {
        self.world.nodes[node.index()]
            .correct()
            .and_then(|m| m.bv_obj.as_ref().map(|bv| bv.bin_values()))
            .unwrap_or_default()
    }

    fn vbb_outcome(&self, node: NodeId, sender: NodeId) -> Outcome<Value> {
        self.world.nodes[node.index()]
            .correct()
            .map(|m| m.vbb.vbb_deliver(sender).cloned())
            .unwrap_or(Outcome::Pending)
    }
}

fn closure_skip() -> Verdict {
    Verdict::skipped("epoch started from injected state")
}

fn brb_validity(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let broadcasts = obs.correct_broadcasts();
    for e in obs.events {
        if let ProtoEvent::BrbDelivered { tag, payload } = &e.event {
            if !obs.is_correct(e.node) || !obs.is_correct(tag.sender) {
                continue;
            }
            match broadcasts.get(tag) {
                Some(expected) if expected == payload => {}
                Some(_) => {
                    return Verdict::fail(format!(
                        "step {}: {} delivered a payload for {} that its correct sender never broadcast",
                        e.step, e.node, tag
                    ))
                }
                None => {
                    return Verdict::fail(format!(
                        "step {}: {} delivered {} although its correct sender never broadcast",
                        e.step, e.node, tag
                    ))
                }
            }
        }
    }
    Verdict::pass()
}

fn brb_integrity(obs: &EpochObservations) -> Verdict {
    let mut seen: BTreeMap<(NodeId, BrbTag), &Vec<u8>> = BTreeMap::new();
    for e in obs.events {
        if let ProtoEvent::BrbDelivered { tag, payload } = &e.event {
            if !obs.is_correct(e.node) {
                continue;
            }
            if let Some(first) = seen.insert((e.node, *tag), payload) {
                let _ = first;
                return Verdict::fail(format!(
                    "step {}: {} delivered {} more than once",
                    e.step, e.node, tag
                ));
            }
        }
    }
    Verdict::pass()
}

fn brb_no_duplicity(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    for tag in obs.all_tags() {
        let mut witness: Option<(NodeId, Vec<u8>)> = None;
        for &node in obs.correct {
            if let Some(payload) = obs.delivered_at(node, tag) {
                match &witness {
                    None => witness = Some((node, payload)),
                    Some((other, first)) if *first != payload => {
                        return Verdict::fail(format!(
                            "{} delivered by {} and {} with different payloads",
                            tag, other, node
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
    }
    Verdict::pass()
}

fn brb_completion_1(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    for (tag, _) in obs.correct_broadcasts() {
        for &node in obs.correct {
            if obs.delivered_at(node, tag).is_none() {
                return Verdict::fail(format!(
                    "{} broadcast by a correct sender but not delivered at {}",
                    tag, node
                ));
            }
        }
    }
    Verdict::pass()
}

fn brb_completion_2(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    for tag in obs.all_tags() {
        let deliverers: Vec<NodeId> = obs
            .correct
            .iter()
            .copied()
            .filter(|&node| obs.delivered_at(node, tag).is_some())
            .collect();
        if !deliverers.is_empty() && deliverers.len() != obs.correct.len() {
            let missing: Vec<String> = obs
                .correct
                .iter()
                .filter(|n| !deliverers.contains(n))
                .map(|n| n.to_string())
                .collect();
            return Verdict::fail(format!(
                "{} delivered at {} of {} correct nodes (missing {})",
                tag,
                deliverers.len(),
                obs.correct.len(),
                missing.join(",")
            ));
        }
    }
    Verdict::pass()
}

fn bv_validity(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let inputs: BTreeSet<bool> = obs
        .events
        .iter()
        .filter(|e| obs.is_correct(e.node))
        .filter_map(|e| match &e.event {
            ProtoEvent::BvInput {
                scope: BvScope::Consensus,
                value,
            } => Some(*value),
            _ => None,
        })
        .collect();
    for e in obs.events {
        if let ProtoEvent::BinValue {
            scope: BvScope::Consensus,
            value,
        } = &e.event
        {
            if obs.is_correct(e.node) && !inputs.contains(value) {
                return Verdict::fail(format!(
                    "step {}: {} accepted {} which no correct node broadcast",
                    e.step, e.node, value
                ));
            }
        }
    }
    Verdict::pass()
}

fn bv_uniformity(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let mut union: BTreeSet<bool> = BTreeSet::new();
    for &node in obs.correct {
        union.extend(obs.bin_values_at(node));
    }
    for v in union {
        for &node in obs.correct {
            if !obs.bin_values_at(node).contains(&v) {
                return Verdict::fail(format!(
                    "{v} accepted somewhere but missing from {node}'s accepted set"
                ));
            }
        }
    }
    Verdict::pass()
}

fn bv_completion(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let invoked: BTreeSet<NodeId> = obs
        .events
        .iter()
        .filter(|e| {
            matches!(
                e.event,
                ProtoEvent::BvInput {
                    scope: BvScope::Consensus,
                    ..
                }
            )
        })
        .map(|e| e.node)
        .collect();
    if !obs.correct.iter().all(|id| invoked.contains(id)) {
        // Not every correct node invoked; the premise is unmet.
        return Verdict::pass();
    }
    for &node in obs.correct {
        if obs.bin_values_at(node).is_empty() {
            return Verdict::fail(format!("{node} has an empty accepted set after completion"));
        }
    }
    Verdict::pass()
}

fn vbb_completion(obs: &EpochObservations) -> Verdict {
    if !obs.completed {
        return Verdict::fail("epoch did not complete within budget".to_string());
    }
    for &node in obs.correct {
        for &sender in obs.correct {
            if obs.vbb_outcome(node, sender).is_pending() {
                return Verdict::fail(format!(
                    "delivery of {sender} still pending at {node} after completion"
                ));
            }
        }
    }
    Verdict::pass()
}

fn vbb_uniformity(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    for sender in obs.world.params().node_ids() {
        let mut resolved: Option<(NodeId, Outcome<Value>)> = None;
        let mut pending_at: Option<NodeId> = None;
        for &node in obs.correct {
            match obs.vbb_outcome(node, sender) {
                Outcome::Pending => pending_at = Some(node),
                outcome => match &resolved {
                    None => resolved = Some((node, outcome)),
                    Some((other, first)) if *first != outcome => {
                        return Verdict::fail(format!(
                            "delivery of {sender}: {other} stabilized to {first} but {node} to {outcome}"
                        ))
                    }
                    Some(_) => {}
                },
            }
        }
        if let (Some((other, first)), Some(stuck)) = (&resolved, pending_at) {
            return Verdict::fail(format!(
                "delivery of {sender}: {other} stabilized to {first} but {stuck} is still pending"
            ));
        }
    }
    Verdict::pass()
}

fn vbb_justification(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let proposed: BTreeSet<&Value> = obs.correct_proposals.values().collect();
    for &node in obs.correct {
        for sender in obs.world.params().node_ids() {
            if let Outcome::Decided(v) = obs.vbb_outcome(node, sender) {
                if !proposed.contains(&v) {
                    return Verdict::fail(format!(
                        "{node} delivered value {v} from {sender}, which no correct node broadcast"
                    ));
                }
            }
        }
    }
    Verdict::pass()
}

fn vbb_obligation(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let Some(v) = obs.unanimous_proposal() else {
        return Verdict::pass();
    };
    for &node in obs.correct {
        for &sender in obs.correct {
            let outcome = obs.vbb_outcome(node, sender);
            if outcome != Outcome::Decided(v.clone()) {
                return Verdict::fail(format!(
                    "unanimous broadcast of {v}, but {node} resolved {sender} to {outcome}"
                ));
            }
        }
    }
    Verdict::pass()
}

fn mvc_completion(obs: &EpochObservations) -> Verdict {
    if obs.completed {
        Verdict::pass()
    } else {
        let stuck: Vec<String> = obs
            .outcomes
            .iter()
            .filter(|(_, o)| o.is_pending())
            .map(|(n, _)| n.to_string())
            .collect();
        Verdict::fail(format!(
            "budget exhausted with pending results at {}",
            stuck.join(",")
        ))
    }
}

fn mvc_agreement(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let mut first: Option<(NodeId, &Outcome<Value>)> = None;
    for (&node, outcome) in obs.outcomes {
        if outcome.is_pending() {
            continue;
        }
        match &first {
            None => first = Some((node, outcome)),
            Some((other, expected)) if *expected != outcome => {
                return Verdict::fail(format!(
                    "{other} stabilized to {expected} but {node} to {outcome}"
                ))
            }
            Some(_) => {}
        }
    }
    Verdict::pass()
}

fn mvc_validity(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let Some(v) = obs.unanimous_proposal() else {
        return Verdict::pass();
    };
    for (node, outcome) in obs.outcomes {
        if *outcome != Outcome::Decided(v.clone()) {
            return Verdict::fail(format!(
                "unanimous proposal {v}, but {node} stabilized to {outcome}"
            ));
        }
    }
    Verdict::pass()
}

fn mvc_no_intrusion(obs: &EpochObservations) -> Verdict {
    if obs.injected {
        return closure_skip();
    }
    let proposed: BTreeSet<&Value> = obs.correct_proposals.values().collect();
    for (node, outcome) in obs.outcomes {
        if let Outcome::Decided(v) = outcome {
            if !proposed.contains(v) {
                return Verdict::fail(format!(
                    "{node} decided {v}, a value proposed only by adversarial nodes"
                ));
            }
        }
    }
    Verdict::pass()
}

/// Run the full property catalog for one epoch.
pub fn check_all(obs: &EpochObservations) -> BTreeMap<String, Verdict> {
    let mut verdicts = BTreeMap::new();
    verdicts.insert("brb_validity".to_string(), brb_validity(obs));
    verdicts.insert("brb_integrity".to_string(), brb_integrity(obs));
    verdicts.insert("brb_no_duplicity".to_string(), brb_no_duplicity(obs));
    verdicts.insert("brb_completion_1".to_string(), brb_completion_1(obs));
    verdicts.insert("brb_completion_2".to_string(), brb_completion_2(obs));
    verdicts.insert("bv_validity".to_string(), bv_validity(obs));
    verdicts.insert("bv_uniformity".to_string(), bv_uniformity(obs));
    verdicts.insert("bv_completion".to_string(), bv_completion(obs));
    verdicts.insert("vbb_completion".to_string(), vbb_completion(obs));
    verdicts.insert("vbb_uniformity".to_string(), vbb_uniformity(obs));
    verdicts.insert("vbb_justification".to_string(), vbb_justification(obs));
    verdicts.insert("vbb_obligation".to_string(), vbb_obligation(obs));
    verdicts.insert("mvc_completion".to_string(), mvc_completion(obs));
    verdicts.insert("mvc_agreement".to_string(), mvc_agreement(obs));
    verdicts.insert("mvc_validity".to_string(), mvc_validity(obs));
    verdicts.insert("mvc_no_intrusion".to_string(), mvc_no_intrusion(obs));
    verdicts
}
