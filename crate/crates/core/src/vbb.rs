//! Validated Byzantine broadcast: a two-phase composition of reliable
//! broadcast instances with consistency tests against corrupted state.
//!
//! Every node runs one `init`-phase instance and one `valid`-phase instance
//! per sender. A sender first broadcasts `(sender, value)`; once it has seen
//! init deliveries from `n-t` senders it broadcasts `(sender, flag)` in the
//! valid phase, where the flag attests that its own value was delivered by
//! at least `n-2t` senders. The delivery query then works through a fixed
//! chain of tests: inconsistent phase activation and ill-formatted payloads
//! yield the error outcome, an attested value with `n-2t` matching init
//! deliveries is returned, a disputed value with `t+1` differing deliveries
//! yields the error outcome, and a node that saw `n-t` valid-phase
//! deliveries without any of the above resolving is forced out of the
//! pending state with the error outcome, so a corrupted instance can never
//! block completion.

use crate::brb::{BrbError, BrbInstance, BrbMessage, BrbTag};
use crate::codec::{self, Pair, PairContent, VbbPhase};
use crate::event::ProtoEvent;
use crate::types::{NodeId, Outcome, SystemParams, Value};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VbbError {
    #[error("value {0} is not in the scenario value set")]
    ValueOutsideSet(Value),
    #[error(transparent)]
    Brb(#[from] BrbError),
}

/// Parsed view of one instance's delivered payload.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub enum DeliverySlot {
    /// No instance, or nothing delivered yet.
    #[default]
    Vacant,
    /// Delivered, but the payload is not a `(sender, content)` pair.
    Malformed,
    /// Delivered a well-formed pair.
    Pair { claimed: NodeId, content: PairContent },
}

impl DeliverySlot {
    fn from_payload(bytes: &[u8]) -> Self {
        match codec::decode_pair(bytes) {
            Some(Pair {
                claimed_sender,
                content,
            }) => DeliverySlot::Pair {
                claimed: claimed_sender,
                content,
            },
            None => DeliverySlot::Malformed,
        }
    }

    fn is_completed(&self) -> bool {
        !matches!(self, DeliverySlot::Vacant)
    }

    /// The value component, present only for pairs carrying a token.
    fn token(&self) -> Option<&str> {
        match self {
            DeliverySlot::Pair {
                content: PairContent::Token(s),
                ..
            } => Some(s),
            _ => None,
        }
    }
}

/// Per-node state of the validated broadcast layer.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct VbbNode {
    pub id: NodeId,
    pub params: SystemParams,
    pub value_set: BTreeSet<Value>,
    /// `brb[phase][sender]`; absent entries are the post-recycling state.
    pub brb: [Vec<Option<BrbInstance>>; 2],
    #[serde(skip)]
    parsed: [Vec<DeliverySlot>; 2],
    /// Some delivered payload anywhere names a sender other than its
    /// instance's; makes every delivery query resolve to the error outcome.
    #[serde(skip)]
    format_poisoned: bool,
}

impl VbbNode {
    pub fn new(id: NodeId, params: SystemParams, value_set: BTreeSet<Value>) -> Self {
        let n = params.n();
        let mut node = VbbNode {
            id,
            params,
            value_set,
            brb: [vec![None; n], vec![None; n]],
            parsed: [vec![DeliverySlot::Vacant; n], vec![DeliverySlot::Vacant; n]],
            format_poisoned: false,
        };
        node.rebuild_cache();
        node
    }

    /// Recompute the parsed-delivery view from the instance states. Must be
    /// called after any out-of-band state mutation (deserialization, fault
    /// injection).
    pub fn rebuild_cache(&mut self) {
        let n = self.params.n();
        self.format_poisoned = false;
        for phase in VbbPhase::ALL {
            let p = phase.index();
            self.parsed[p] = vec![DeliverySlot::Vacant; n];
            for sender in 0..n {
                let payload = self.brb[p][sender]
                    .as_ref()
                    .and_then(|inst| inst.delivered().map(<[u8]>::to_vec));
                if let Some(payload) = payload {
                    self.refresh_slot_from(phase, sender, &payload);
                }
            }
        }
    }

    fn refresh_slot_from(&mut self, phase: VbbPhase, sender: usize, payload: &[u8]) {
        let slot = DeliverySlot::from_payload(payload);
        if let DeliverySlot::Pair { claimed, .. } = &slot {
            if claimed.index() != sender {
                self.format_poisoned = true;
            }
        }
        self.parsed[phase.index()][sender] = slot;
    }

    fn instance(&mut self, tag: BrbTag) -> &mut BrbInstance {
        self.brb[tag.phase.index()][tag.sender.index()].get_or_insert_with(|| BrbInstance::new(tag))
    }

    pub fn is_active(&self, phase: VbbPhase, sender: NodeId) -> bool {
        self.brb[phase.index()][sender.index()].is_some()
    }

    /// Start this node's broadcast of `v` via the init phase.
    pub fn vbb_broadcast(
        &mut self,
        v: &Value,
        events: &mut Vec<ProtoEvent>,
    ) -> Result<Vec<BrbMessage>, VbbError> {
        if !self.value_set.contains(v) {
            return Err(VbbError::ValueOutsideSet(v.clone()));
        }
        let id = self.id;
        let tag = BrbTag {
            phase: VbbPhase::Init,
            sender: id,
        };
        let payload = codec::encode_value_pair(id, v);
        Ok(self.instance(tag).broadcast(id, payload, events)?)
    }

    /// Route one reliable-broadcast message to its instance, activating the
    /// instance if this is the first traffic for its tag.
    pub fn on_brb_message(
        &mut self,
        from: NodeId,
        msg: &BrbMessage,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<BrbMessage> {
        if !self.params.contains(msg.tag.sender) {
            events.push(ProtoEvent::Anomaly {
                what: format!("broadcast tag names out-of-range sender {}", msg.tag.sender),
            });
            return Vec::new();
        }
        let params = self.params;
        let tag = msg.tag;
        let out = self.instance(tag).on_message(&params, from, msg, events);
        // Keep the parsed view in sync with a fresh delivery.
        if let Some(payload) = self.brb[tag.phase.index()][tag.sender.index()]
            .as_ref()
            .and_then(|i| i.delivered().map(<[u8]>::to_vec))
        {
            if !self.parsed[tag.phase.index()][tag.sender.index()].is_completed() {
                self.refresh_slot_from(tag.phase, tag.sender.index(), &payload);
            }
        }
        out
    }

    /// True once `n-t` senders have a completed delivery in `phase`.
    pub fn vbb_echo(&self, phase: VbbPhase) -> bool {
        let completed = self.parsed[phase.index()]
            .iter()
            .filter(|s| s.is_completed())
            .count();
        completed >= self.params.thresholds().quorum_nt
    }

    /// True once `n-2t` init-phase deliveries carry a value equal to `v`.
    pub fn vbb_eq(&self, v: &Value) -> bool {
        let matching = self.parsed[VbbPhase::Init.index()]
            .iter()
            .filter(|s| s.token() == Some(v.as_str()))
            .count();
        matching >= self.params.thresholds().quorum_n2t
    }

    /// True once `t+1` init-phase deliveries carry a value different from `v`.
    pub fn vbb_diff(&self, v: &Value) -> bool {
        let differing = self.parsed[VbbPhase::Init.index()]
            .iter()
            .filter(|s| s.token().is_some_and(|w| w != v.as_str()))
            .count();
        differing >= self.params.thresholds().plurality_t1
    }

    /// The delivery query for sender `k`: a pure read evaluating the
    /// consistency tests in their fixed order, first match wins.
    pub fn vbb_deliver(&self, k: NodeId) -> Outcome<&Value> {
        let init_slot = &self.parsed[VbbPhase::Init.index()][k.index()];
        let valid_slot = &self.parsed[VbbPhase::Valid.index()][k.index()];

        // (1) valid phase active without the init phase.
        if !self.is_active(VbbPhase::Init, k) && self.is_active(VbbPhase::Valid, k) {
            return Outcome::Error;
        }
        // (2) some delivered pair anywhere names a foreign sender.
        if self.format_poisoned {
            return Outcome::Error;
        }
        // (3) both of k's phases must have completed deliveries.
        if !init_slot.is_completed() || !valid_slot.is_completed() {
            return Outcome::Pending;
        }
        // (4) payload format: a value from V and a boolean flag.
        let value = init_slot.token().and_then(|token| self.value_set.get(token));
        let flag = match valid_slot {
            DeliverySlot::Pair {
                content: PairContent::Flag(0),
                ..
            } => Some(false),
            DeliverySlot::Pair {
                content: PairContent::Flag(1),
                ..
            } => Some(true),
            _ => None,
        };
        let (Some(value), Some(flag)) = (value, flag) else {
            return Outcome::Error;
        };
        // (5) attested and re-validated locally.
        if flag && self.vbb_eq(value) {
            return Outcome::Decided(value);
        }
        // (6) disputed with enough differing deliveries.
        if !flag && self.vbb_diff(value) {
            return Outcome::Error;
        }
        // (7) the valid phase completed at n-t senders, yet nothing above
        // resolved: a corrupted attestation must not block completion.
        if self.vbb_echo(VbbPhase::Valid) {
            return Outcome::Error;
        }
        // (8) still in progress.
        Outcome::Pending
    }

    /// One do-forever iteration: move to the valid phase when ready and
    /// re-emit every instance's contributions.
    pub fn vbb_tick(&mut self, events: &mut Vec<ProtoEvent>) -> Vec<BrbMessage> {
        let mut out = Vec::new();
        let id = self.id;
        // The phase guard is deliberately only "own init delivered": even a
        // delivered junk payload must push this node into the valid phase,
        // or a single corrupted instance could stall every peer's query.
        let own_delivered = self.parsed[VbbPhase::Init.index()][id.index()].is_completed();
        if self.vbb_echo(VbbPhase::Init) && own_delivered {
            let attested = match self.parsed[VbbPhase::Init.index()][id.index()].token() {
                Some(token) => self.vbb_eq(&Value(token.to_string())),
                None => false,
            };
            let tag = BrbTag {
                phase: VbbPhase::Valid,
                sender: id,
            };
            let payload = codec::encode_flag_pair(id, attested);
            match self.instance(tag).broadcast(id, payload, events) {
                Ok(msgs) => out.extend(msgs),
                Err(_) => unreachable!("own id owns its tag"),
            }
        }
        for phase in VbbPhase::ALL {
            for slot in &self.brb[phase.index()] {
                if let Some(inst) = slot {
                    out.extend(inst.resend());
                }
            }
        }
        out
    }
}
