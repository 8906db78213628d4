//! The original blocking-style reduction, kept as a differential oracle.
//!
//! This stack decides the way the non-stabilizing construction does: each
//! wait statement becomes a latch that fires once its condition first holds,
//! and a fired latch is never re-evaluated. There are no consistency tests
//! and no binary-values object; outcomes for each sender and the final
//! result are assigned exactly once. Transport reuses the same reliable
//! broadcast and binary consensus machinery (with retransmission, since the
//! simulated channels are lossy), so the two stacks differ purely in their
//! decision logic.

use crate::bc::BcObject;
use crate::brb::{BrbInstance, BrbTag};
use crate::codec::{self, Layer, VbbPhase};
use crate::event::ProtoEvent;
use crate::mvc::LayerOut;
use crate::simnet::{Envelope, Outbound};
use crate::types::{NodeId, Outcome, SystemParams, Value};
use std::collections::{BTreeMap, BTreeSet};

pub struct RefNode {
    pub id: NodeId,
    pub params: SystemParams,
    pub value_set: BTreeSet<Value>,
    my_value: Option<Value>,
    brb: [Vec<Option<BrbInstance>>; 2],
    /// Latch: the valid-phase attestation has been broadcast.
    valid_sent: bool,
    /// Latch per sender: the delivered value or the error symbol.
    delivered: Vec<Option<Outcome<Value>>>,
    bc: Option<BcObject>,
    round_cap: u16,
    coin_seed: u64,
    /// Latch: the blocking call's return value.
    final_result: Option<Outcome<Value>>,
}

impl RefNode {
    pub fn new(
        id: NodeId,
        params: SystemParams,
        value_set: BTreeSet<Value>,
        round_cap: u16,
        coin_seed: u64,
    ) -> Self {
        let n = params.n();
        RefNode {
            id,
            params,
            value_set,
            my_value: None,
            brb: [vec![None; n], vec![None; n]],
            valid_sent: false,
            delivered: vec![None; n],
            bc: None,
            round_cap,
            coin_seed,
            final_result: None,
        }
    }

    fn instance(&mut self, tag: BrbTag) -> &mut BrbInstance {
        self.brb[tag.phase.index()][tag.sender.index()].get_or_insert_with(|| BrbInstance::new(tag))
    }

    /// Value components of well-formed init deliveries, by sender.
    fn init_tokens(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for (sender, slot) in self.brb[VbbPhase::Init.index()].iter().enumerate() {
            if let Some(inst) = slot {
                if let Some(bytes) = inst.delivered() {
                    if let Some(pair) = codec::decode_pair(bytes) {
                        if pair.claimed_sender.index() == sender {
                            if let Some(token) = pair.token() {
                                out.push((sender, token.to_string()));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn valid_flag(&self, sender: usize) -> Option<bool> {
        let inst = self.brb[VbbPhase::Valid.index()][sender].as_ref()?;
        let pair = codec::decode_pair(inst.delivered()?)?;
        if pair.claimed_sender.index() != sender {
            return None;
        }
        pair.flag()
    }

    pub fn propose(
        &mut self,
        v: &Value,
        params: &SystemParams,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<Outbound> {
        if self.my_value.is_some() {
            return Vec::new();
        }
        self.my_value = Some(v.clone());
        let id = self.id;
        let tag = BrbTag {
            phase: VbbPhase::Init,
            sender: id,
        };
        let payload = codec::encode_value_pair(id, v);
        let msgs = self
            .instance(tag)
            .broadcast(id, payload, events)
            .expect("own tag");
        crate::node::layer_out_to_outbound(
            LayerOut {
                brb: msgs,
                ..LayerOut::default()
            },
            params,
        )
    }

    pub fn on_envelope(
        &mut self,
        env: &Envelope,
        params: &SystemParams,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<Outbound> {
        let mut out = LayerOut::default();
        match env.layer {
            Layer::Brb => {
                if let Some(msg) = codec::decode_brb(&env.body) {
                    if params.contains(msg.tag.sender) {
                        let p = *params;
                        out.brb = self.instance(msg.tag).on_message(&p, env.src, &msg, events);
                    }
                }
            }
            Layer::Bc => {
                if let Some(msg) = codec::decode_bc(&env.body) {
                    if let Some(bc) = &mut self.bc {
                        out.bc = bc.on_message(params, env.src, msg, events);
                    }
                }
            }
            // No binary-values object in this stack.
            Layer::Bv => {}
        }
        crate::node::layer_out_to_outbound(out, params)
    }

    pub fn tick(&mut self, params: &SystemParams, events: &mut Vec<ProtoEvent>) -> Vec<Outbound> {
        let th = params.thresholds();
        let mut out = LayerOut::default();

        // Wait |rec| >= n-t, then attest whether the own value reached n-2t.
        if !self.valid_sent {
            if let Some(my_value) = self.my_value.clone() {
                let tokens = self.init_tokens();
                if tokens.len() >= th.quorum_nt {
                    let equal = tokens
                        .iter()
                        .filter(|(_, tok)| tok == my_value.as_str())
                        .count();
                    let attested = equal >= th.quorum_n2t;
                    let id = self.id;
                    let tag = BrbTag {
                        phase: VbbPhase::Valid,
                        sender: id,
                    };
                    let payload = codec::encode_flag_pair(id, attested);
                    out.brb
                        .extend(self.instance(tag).broadcast(id, payload, events).expect("own tag"));
                    self.valid_sent = true;
                }
            }
        }

        // Per-sender background task: once both phases delivered, wait for
        // the matching (or differing) quorum and latch the outcome.
        let tokens = self.init_tokens();
        for sender in 0..params.n() {
            if self.delivered[sender].is_some() {
                continue;
            }
            let Some(token) = tokens
                .iter()
                .find(|(s, _)| *s == sender)
                .map(|(_, t)| t.clone())
            else {
                continue;
            };
            let Some(flag) = self.valid_flag(sender) else {
                continue;
            };
            let equal = tokens.iter().filter(|(_, t)| *t == token).count();
            let differ = tokens.iter().filter(|(_, t)| *t != token).count();
            if flag && equal >= th.quorum_n2t {
                self.delivered[sender] = Some(Outcome::Decided(Value(token)));
            } else if !flag && differ >= th.plurality_t1 {
                self.delivered[sender] = Some(Outcome::Error);
            }
        }

        // Wait for n-t delivered senders, then propose the predicate.
        if self.bc.is_none() {
            let resolved = self.delivered.iter().filter(|d| d.is_some()).count();
            if resolved >= th.quorum_nt {
                let mut bc = BcObject::new(self.round_cap, self.coin_seed);
                out.bc.extend(bc.propose(self.same_value(), events));
                self.bc = Some(bc);
            }
        }
        if let Some(bc) = &mut self.bc {
            out.bc.extend(bc.tick(params, events));
        }

        // Retransmission keeps the lossy channels covered.
        for phase in VbbPhase::ALL {
            for slot in &self.brb[phase.index()] {
                if let Some(inst) = slot {
                    out.brb.extend(inst.resend());
                }
            }
        }

        self.update_result();
        crate::node::layer_out_to_outbound(out, params)
    }

    fn same_value(&self) -> bool {
        let th = self.params.thresholds();
        let mut counts: BTreeMap<&Value, usize> = BTreeMap::new();
        for outcome in self.delivered.iter().flatten() {
            if let Outcome::Decided(v) = outcome {
                *counts.entry(v).or_insert(0) += 1;
            }
        }
        counts.len() == 1 && counts.values().any(|&c| c >= th.quorum_n2t)
    }

    fn update_result(&mut self) {
        if self.final_result.is_some() {
            return;
        }
        let Some(bc) = &self.bc else { return };
        match bc.result() {
            Outcome::Pending => {}
            Outcome::Error | Outcome::Decided(false) => {
                self.final_result = Some(Outcome::Error);
            }
            Outcome::Decided(true) => {
                let th = self.params.thresholds();
                let mut counts: BTreeMap<&Value, usize> = BTreeMap::new();
                for outcome in self.delivered.iter().flatten() {
                    if let Outcome::Decided(v) = outcome {
                        *counts.entry(v).or_insert(0) += 1;
                    }
                }
                let winner = counts
                    .iter()
                    .filter(|(_, &c)| c >= th.quorum_n2t)
                    .max_by(|(va, ca), (vb, cb)| ca.cmp(cb).then(vb.cmp(va)))
                    .map(|(v, _)| (*v).clone());
                if let Some(v) = winner {
                    self.final_result = Some(Outcome::Decided(v));
                }
            }
        }
    }

    pub fn result(&self) -> Outcome<Value> {
        self.final_result.clone().unwrap_or(Outcome::Pending)
    }
}
