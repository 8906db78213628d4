//! Byzantine strategy library and the transient-fault injector.
//!
//! Strategies produce envelopes through the same wire codec as honest code
//! and can never forge their source address (the simulator stamps it).
//!
//! Injection mutates protocol state and channel contents before the first
//! step of an epoch, never code: mutations are applied through the state's
//! serialized form, so anything representable — including semantically
//! illegal combinations — can be installed, and anything unrepresentable is
//! rejected.

use crate::bc::{BcObject, RoundState};
use crate::brb::{BrbInstance, BrbTag};
use crate::bv::BvObject;
use crate::codec::{self, Layer, VbbPhase};
use crate::mvc::MvcNode;
use crate::node::Behavior;
use crate::simnet::{Envelope, Outbound, SimWorld, TraceKind, TraceRecord};
use crate::types::{NodeId, Outcome, SystemParams, Value};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// How an adversarial node behaves.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ByzantineStrategy {
    /// Never sends anything.
    Silent,
    /// Sends one value to the first half of the nodes and another to the rest.
    Equivocate { v1: Value, v2: Value },
    /// Broadcasts a valid-phase attestation of `true` without earning it.
    FakeValidTrue,
    /// Broadcasts a valid-phase attestation of `false`.
    FakeValidFalse,
    /// Runs the honest protocol, but proposes the adversary's value.
    CollusionValue { value: Value },
    /// Emits well-formed envelopes with random bodies.
    RandomNoise { seed: u64 },
}

/// Runtime state of an adversarial node.
pub struct ByzantineNode {
    pub strategy: ByzantineStrategy,
    /// Value this node feigns in the init phase, when the scenario gives it one.
    pub proposal: Option<Value>,
    /// Honest sub-state for the collusion strategy.
    pub honest: Option<MvcNode>,
    pub noise_rng: Option<ChaCha8Rng>,
}

impl ByzantineNode {
    pub fn new(
        strategy: ByzantineStrategy,
        proposal: Option<Value>,
        id: NodeId,
        params: SystemParams,
        value_set: BTreeSet<Value>,
        round_cap: u16,
        coin_seed: u64,
    ) -> Self {
        let honest = match &strategy {
            ByzantineStrategy::CollusionValue { .. } => {
                Some(MvcNode::new(id, params, value_set, round_cap, coin_seed))
            }
            _ => None,
        };
        let noise_rng = match &strategy {
            ByzantineStrategy::RandomNoise { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        ByzantineNode {
            strategy,
            proposal,
            honest,
            noise_rng,
        }
    }

    fn broadcast_brb(
        params: &SystemParams,
        msg: &crate::brb::BrbMessage,
        out: &mut Vec<Outbound>,
    ) {
        let body = codec::encode_brb(msg);
        for dst in params.node_ids() {
            out.push(Outbound {
                dst,
                layer: Layer::Brb,
                body: body.clone(),
            });
        }
    }

    fn noise_envelope(params: &SystemParams, rng: &mut ChaCha8Rng) -> Outbound {
        let dst = NodeId(rng.gen_range(0..params.n() as u16));
        let layer = match rng.gen_range(0..3) {
            0 => Layer::Brb,
            1 => Layer::Bv,
            _ => Layer::Bc,
        };
        let len = rng.gen_range(0..12);
        let body = (0..len).map(|_| rng.gen()).collect();
        Outbound { dst, layer, body }
    }

    /// Spontaneous behavior, invoked by the adversarial node's loop action.
    pub fn tick(
        &mut self,
        id: NodeId,
        params: &SystemParams,
        events: &mut Vec<crate::event::ProtoEvent>,
    ) -> Vec<Outbound> {
        let mut out = Vec::new();
        match &self.strategy {
            ByzantineStrategy::Silent => {}
            ByzantineStrategy::Equivocate { v1, v2 } => {
                let half = params.n() / 2;
                for (value, range) in [(v1, 0..half), (v2, half..params.n())] {
                    let msg = crate::brb::BrbMessage {
                        kind: crate::brb::BrbKind::Init,
                        tag: BrbTag {
                            phase: VbbPhase::Init,
                            sender: id,
                        },
                        payload: codec::encode_value_pair(id, value),
                    };
                    let body = codec::encode_brb(&msg);
                    for dst in range {
                        out.push(Outbound {
                            dst: NodeId(dst as u16),
                            layer: Layer::Brb,
                            body: body.clone(),
                        });
                    }
                }
            }
            ByzantineStrategy::FakeValidTrue | ByzantineStrategy::FakeValidFalse => {
                let flag = matches!(self.strategy, ByzantineStrategy::FakeValidTrue);
                let valid = crate::brb::BrbMessage {
                    kind: crate::brb::BrbKind::Init,
                    tag: BrbTag {
                        phase: VbbPhase::Valid,
                        sender: id,
                    },
                    payload: codec::encode_flag_pair(id, flag),
                };
                Self::broadcast_brb(params, &valid, &mut out);
                if let Some(v) = &self.proposal {
                    let init = crate::brb::BrbMessage {
                        kind: crate::brb::BrbKind::Init,
                        tag: BrbTag {
                            phase: VbbPhase::Init,
                            sender: id,
                        },
                        payload: codec::encode_value_pair(id, v),
                    };
                    Self::broadcast_brb(params, &init, &mut out);
                }
            }
            ByzantineStrategy::CollusionValue { .. } => {
                if let Some(honest) = &mut self.honest {
                    return crate::node::layer_out_to_outbound(honest.tick(events), params);
                }
            }
            ByzantineStrategy::RandomNoise { .. } => {
                if let Some(rng) = &mut self.noise_rng {
                    for _ in 0..2 {
                        out.push(Self::noise_envelope(params, rng));
                    }
                }
            }
        }
        out
    }

    /// Reaction to an incoming envelope.
    pub fn on_envelope(
        &mut self,
        env: &Envelope,
        params: &SystemParams,
        events: &mut Vec<crate::event::ProtoEvent>,
    ) -> Vec<Outbound> {
        match &self.strategy {
            ByzantineStrategy::CollusionValue { .. } => match &mut self.honest {
                Some(honest) => crate::node::handle_envelope_honest(honest, env, params, events),
                None => Vec::new(),
            },
            ByzantineStrategy::RandomNoise { .. } => {
                if let Some(rng) = &mut self.noise_rng {
                    if rng.gen_bool(0.5) {
                        return vec![Self::noise_envelope(params, rng)];
                    }
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }
}

/// One targeted state edit, addressed into the node's serialized form with a
/// dot-separated path (object keys and array indices).
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PathMutation {
    pub node: NodeId,
    pub path: String,
    pub value: serde_json::Value,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutations {
    /// Targeted edits.
    Paths { entries: Vec<PathMutation> },
    /// Replace the whole protocol state of every target with a draw from the
    /// representable domain.
    Randomize { seed: u64 },
}

/// An envelope to pre-load into a channel before the epoch starts.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ChannelPreload {
    pub src: NodeId,
    pub dst: NodeId,
    pub layer: Layer,
    /// Stamped with the current epoch when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u64>,
    pub body_hex: String,
}

/// A transient fault: applied once, at step zero of an epoch.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize, Default)]
pub struct InjectionPlan {
    #[serde(default)]
    pub targets: BTreeSet<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutations: Option<Mutations>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channel_mutations: Vec<ChannelPreload>,
}

#[derive(Debug, Error)]
pub enum InjectionError {
    #[error("injection is only legal before the first step of an epoch")]
    NotEpochStart,
    #[error("target {0} is not a correct node")]
    TargetNotCorrect(NodeId),
    #[error("path `{path}` does not address the node state: {reason}")]
    BadPath { path: String, reason: String },
    #[error("mutated state is not representable: {0}")]
    NotRepresentable(String),
    #[error("channel preload exceeds capacity on {src}->{dst}")]
    PreloadOverflow { src: NodeId, dst: NodeId },
    #[error("preload body is not valid hex: {0}")]
    BadPreloadBody(String),
}

fn navigate<'a>(
    root: &'a mut serde_json::Value,
    path: &str,
) -> Result<&'a mut serde_json::Value, String> {
    let mut cur = root;
    for seg in path.split('.') {
        cur = match cur {
            serde_json::Value::Object(map) => map
                .get_mut(seg)
                .ok_or_else(|| format!("no field `{seg}`"))?,
            serde_json::Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| format!("`{seg}` is not an index"))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| format!("index {idx} out of bounds"))?
            }
            other => {
                return Err(format!(
                    "cannot descend into {} at `{seg}`",
                    match other {
                        serde_json::Value::Null => "null",
                        serde_json::Value::Bool(_) => "a bool",
                        serde_json::Value::Number(_) => "a number",
                        serde_json::Value::String(_) => "a string",
                        _ => "a leaf",
                    }
                ))
            }
        };
    }
    Ok(cur)
}

fn random_payload(rng: &mut ChaCha8Rng, params: &SystemParams, values: &BTreeSet<Value>) -> Vec<u8> {
    match rng.gen_range(0..4) {
        // A well-formed value pair with a random (possibly wrong) sender.
        0 => {
            let sender = NodeId(rng.gen_range(0..params.n() as u16));
            let pool: Vec<&Value> = values.iter().collect();
            let v = pool[rng.gen_range(0..pool.len())];
            codec::encode_value_pair(sender, v)
        }
        // A well-formed flag pair.
        1 => {
            let sender = NodeId(rng.gen_range(0..params.n() as u16));
            codec::encode_flag_pair(sender, rng.gen())
        }
        // An ill-typed flag byte.
        2 => {
            let sender: u16 = rng.gen_range(0..params.n() as u16);
            vec![sender.to_le_bytes()[0], sender.to_le_bytes()[1], 1, rng.gen_range(2..=u8::MAX)]
        }
        // Arbitrary junk.
        _ => {
            let len = rng.gen_range(0..10);
            (0..len).map(|_| rng.gen()).collect()
        }
    }
}

fn random_node_set(rng: &mut ChaCha8Rng, params: &SystemParams) -> BTreeSet<NodeId> {
    params.node_ids().filter(|_| rng.gen_bool(0.4)).collect()
}

fn random_brb_instance(
    rng: &mut ChaCha8Rng,
    tag: BrbTag,
    params: &SystemParams,
    values: &BTreeSet<Value>,
) -> BrbInstance {
    let mut inst = BrbInstance::new(tag);
    let maybe_payload = |rng: &mut ChaCha8Rng, p: f64| {
        if rng.gen_bool(p) {
            Some(random_payload(rng, params, values))
        } else {
            None
        }
    };
    inst.my_init = maybe_payload(rng, 0.4);
    inst.echoed = maybe_payload(rng, 0.5);
    inst.readied = maybe_payload(rng, 0.4);
    inst.delivered = maybe_payload(rng, 0.3);
    for map in [&mut inst.echoes, &mut inst.readies] {
        let payload = random_payload(rng, params, values);
        for voter in random_node_set(rng, params) {
            // Occasionally register a voter under a second payload, a state
            // only a fault can produce.
            let key = if rng.gen_bool(0.2) {
                random_payload(rng, params, values)
            } else {
                payload.clone()
            };
            map.entry(key).or_default().insert(voter);
        }
    }
    inst
}

fn random_bv(rng: &mut ChaCha8Rng, params: &SystemParams) -> BvObject {
    let mut bv = BvObject::new();
    bv.my_value = if rng.gen_bool(0.5) { Some(rng.gen()) } else { None };
    for v in [false, true] {
        bv.received[v as usize] = random_node_set(rng, params);
        bv.relayed[v as usize] = rng.gen_bool(0.4);
        if rng.gen_bool(0.3) {
            bv.bin_values[v as usize] = true;
            bv.accepted_order.push(v);
        }
    }
    bv
}

fn random_bc(rng: &mut ChaCha8Rng, params: &SystemParams, round_cap: u16, coin_seed: u64) -> BcObject {
    let mut bc = BcObject::new(round_cap, coin_seed);
    bc.proposal = if rng.gen_bool(0.6) { Some(rng.gen()) } else { None };
    bc.est = rng.gen();
    // Full representable domain: the counter may land far past the cap.
    bc.round = rng.gen();
    bc.decision = match rng.gen_range(0..4) {
        0 => Outcome::Decided(rng.gen()),
        1 => Outcome::Error,
        _ => Outcome::Pending,
    };
    for _ in 0..rng.gen_range(0..3usize) {
        let round = rng.gen_range(1..=round_cap.saturating_add(1).max(1));
        let mut state = RoundState {
            bv: random_bv(rng, params),
            aux_sent: if rng.gen_bool(0.5) { Some(rng.gen()) } else { None },
            aux_votes: Default::default(),
        };
        for voter in random_node_set(rng, params) {
            state.aux_votes.insert(voter, rng.gen());
        }
        bc.rounds.insert(round, state);
    }
    bc
}

/// Replace a node's per-epoch protocol state with a random representable
/// one. Identity, topology, and configuration constants stay intact, as the
/// fault model only corrupts data state.
pub fn randomize_node(node: &mut MvcNode, rng: &mut ChaCha8Rng) {
    let params = node.params;
    let values = node.vbb.value_set.clone();
    for phase in VbbPhase::ALL {
        for sender in params.node_ids() {
            let tag = BrbTag { phase, sender };
            node.vbb.brb[phase.index()][sender.index()] = if rng.gen_bool(0.5) {
                Some(random_brb_instance(rng, tag, &params, &values))
            } else {
                None
            };
        }
    }
    node.bv_obj = if rng.gen_bool(0.5) {
        Some(random_bv(rng, &params))
    } else {
        None
    };
    node.bc_obj = if rng.gen_bool(0.5) {
        Some(random_bc(rng, &params, node.round_cap, node.coin_seed))
    } else {
        None
    };
    node.latched_same_value = if rng.gen_bool(0.5) { Some(rng.gen()) } else { None };
    node.rebuild_cache();
}

/// Apply a transient-fault plan to a world standing at the start of an epoch.
pub fn apply_injection(world: &mut SimWorld, plan: &InjectionPlan) -> Result<(), InjectionError> {
    if world.epoch_steps != 0 {
        return Err(InjectionError::NotEpochStart);
    }
    for target in &plan.targets {
        let slot = &world.nodes[target.index()];
        if !matches!(slot.behavior, Behavior::Correct(_)) {
            return Err(InjectionError::TargetNotCorrect(*target));
        }
    }

    match &plan.mutations {
        None => {}
        Some(Mutations::Randomize { seed }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for target in &plan.targets {
                if let Behavior::Correct(node) = &mut world.nodes[target.index()].behavior {
                    randomize_node(node, &mut rng);
                }
            }
        }
        Some(Mutations::Paths { entries }) => {
            for entry in entries {
                if !plan.targets.contains(&entry.node) {
                    return Err(InjectionError::TargetNotCorrect(entry.node));
                }
                let Behavior::Correct(node) = &mut world.nodes[entry.node.index()].behavior else {
                    return Err(InjectionError::TargetNotCorrect(entry.node));
                };
                let mut state = serde_json::to_value(&*node)
                    .map_err(|e| InjectionError::NotRepresentable(e.to_string()))?;
                let slot = navigate(&mut state, &entry.path).map_err(|reason| {
                    InjectionError::BadPath {
                        path: entry.path.clone(),
                        reason,
                    }
                })?;
                *slot = entry.value.clone();
                let mut mutated: MvcNode = serde_json::from_value(state)
                    .map_err(|e| InjectionError::NotRepresentable(e.to_string()))?;
                mutated.rebuild_cache();
                *node = mutated;
            }
        }
    }

    for preload in &plan.channel_mutations {
        let body = hex::decode(&preload.body_hex)
            .map_err(|e| InjectionError::BadPreloadBody(e.to_string()))?;
        let env = Envelope {
            src: preload.src,
            dst: preload.dst,
            layer: preload.layer,
            epoch: preload.epoch.unwrap_or(world.epoch),
            body,
        };
        let capacity = world.config.channel_capacity;
        let chan = world.channel_mut(preload.src, preload.dst);
        if chan.len() >= capacity {
            return Err(InjectionError::PreloadOverflow {
                src: preload.src,
                dst: preload.dst,
            });
        }
        chan.push_back(env);
    }

    let step = world.clock;
    let summary = format!(
        "injection: {} targets, {} preloads",
        plan.targets.len(),
        plan.channel_mutations.len()
    );
    world.record(TraceRecord {
        step,
        kind: TraceKind::Inject,
        src: None,
        dst: None,
        protocol: None,
        summary,
    });
    Ok(())
}
