//! Byzantine reliable broadcast instances, one per `(phase, sender)` tag.
//!
//! The realization is the classic three-message scheme: the sender emits
//! `INIT(m)`, everyone echoes the first init they see, a majority of echoes
//! (more than `(n+t)/2`) triggers `READY(m)`, `t+1` readies amplify, and
//! `2t+1` readies deliver. Every contribution a node has made is re-emitted
//! on each do-forever iteration, which is what keeps the instance alive over
//! lossy bounded-capacity channels and after state corruption.
//!
//! Payloads are opaque byte strings here; the broadcast composition layered
//! on top owns their format.

use crate::codec::VbbPhase;
use crate::event::ProtoEvent;
use crate::types::{NodeId, SystemParams};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Identifies one broadcast instance within a recycling epoch.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct BrbTag {
    pub phase: VbbPhase,
    pub sender: NodeId,
}

impl std::fmt::Display for BrbTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let phase = match self.phase {
            VbbPhase::Init => "init",
            VbbPhase::Valid => "valid",
        };
        write!(f, "{}/{}", phase, self.sender)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum BrbKind {
    Init,
    Echo,
    Ready,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BrbMessage {
    pub kind: BrbKind,
    pub tag: BrbTag,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BrbError {
    #[error("broadcast invoked on instance {tag} owned by {owner}")]
    SenderMismatch { tag: BrbTag, owner: NodeId },
}

/// Per-tag broadcast state at one node.
///
/// Vote maps are keyed by payload; protocol code adds at most one vote per
/// `(node, message kind)`, but the representation deliberately admits the
/// inconsistent states a transient fault can leave behind (a node appearing
/// under several payloads, delivery without votes, and so on).
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BrbInstance {
    pub tag: BrbTag,
    /// Payload this node is broadcasting, when it is the instance's sender.
    pub my_init: Option<Vec<u8>>,
    /// Payload this node has echoed (set by the sender's first INIT).
    pub echoed: Option<Vec<u8>>,
    /// Payload this node has sent READY for.
    pub readied: Option<Vec<u8>>,
    /// The delivered payload; set at most once per epoch by protocol code.
    pub delivered: Option<Vec<u8>>,
    pub echoes: BTreeMap<Vec<u8>, BTreeSet<NodeId>>,
    pub readies: BTreeMap<Vec<u8>, BTreeSet<NodeId>>,
}

fn has_voted(map: &BTreeMap<Vec<u8>, BTreeSet<NodeId>>, from: NodeId) -> bool {
    map.values().any(|voters| voters.contains(&from))
}

fn votes(map: &BTreeMap<Vec<u8>, BTreeSet<NodeId>>, payload: &[u8]) -> usize {
    map.get(payload).map_or(0, BTreeSet::len)
}

impl BrbInstance {
    pub fn new(tag: BrbTag) -> Self {
        BrbInstance {
            tag,
            my_init: None,
            echoed: None,
            readied: None,
            delivered: None,
            echoes: BTreeMap::new(),
            readies: BTreeMap::new(),
        }
    }

    /// Start (or keep re-announcing) this node's broadcast.
    ///
    /// The first payload of the epoch wins; a later call with a different one
    /// is ignored and flagged, since a correct node broadcasts once per tag.
    pub fn broadcast(
        &mut self,
        local: NodeId,
        payload: Vec<u8>,
        events: &mut Vec<ProtoEvent>,
    ) -> Result<Vec<BrbMessage>, BrbError> {
        if self.tag.sender != local {
            return Err(BrbError::SenderMismatch {
                tag: self.tag,
                owner: self.tag.sender,
            });
        }
        match &self.my_init {
            None => {
                self.my_init = Some(payload.clone());
                events.push(ProtoEvent::BrbBroadcast {
                    tag: self.tag,
                    payload: payload.clone(),
                });
            }
            Some(existing) if *existing != payload => {
                events.push(ProtoEvent::Anomaly {
                    what: format!("conflicting re-broadcast on {} ignored", self.tag),
                });
            }
            Some(_) => {}
        }
        Ok(vec![BrbMessage {
            kind: BrbKind::Init,
            tag: self.tag,
            payload: self.my_init.clone().expect("set above"),
        }])
    }

    /// Handle one incoming protocol message for this tag.
    pub fn on_message(
        &mut self,
        params: &SystemParams,
        from: NodeId,
        msg: &BrbMessage,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<BrbMessage> {
        debug_assert_eq!(msg.tag, self.tag);
        let th = params.thresholds();
        let mut out = Vec::new();
        match msg.kind {
            BrbKind::Init => {
                // Only the authenticated sender can seed the echo; the first
                // init of the epoch wins locally.
                if from != self.tag.sender {
                    events.push(ProtoEvent::Anomaly {
                        what: format!("INIT for {} from non-sender {from}", self.tag),
                    });
                    return out;
                }
                if self.echoed.is_none() {
                    self.echoed = Some(msg.payload.clone());
                    out.push(BrbMessage {
                        kind: BrbKind::Echo,
                        tag: self.tag,
                        payload: msg.payload.clone(),
                    });
                }
            }
            BrbKind::Echo => {
                if !has_voted(&self.echoes, from) {
                    self.echoes
                        .entry(msg.payload.clone())
                        .or_default()
                        .insert(from);
                }
                if votes(&self.echoes, &msg.payload) >= th.echo_majority
                    && self.readied.is_none()
                {
                    self.readied = Some(msg.payload.clone());
                    out.push(BrbMessage {
                        kind: BrbKind::Ready,
                        tag: self.tag,
                        payload: msg.payload.clone(),
                    });
                }
            }
            BrbKind::Ready => {
                if !has_voted(&self.readies, from) {
                    self.readies
                        .entry(msg.payload.clone())
                        .or_default()
                        .insert(from);
                }
                let support = votes(&self.readies, &msg.payload);
                if support >= th.plurality_t1 && self.readied.is_none() {
                    self.readied = Some(msg.payload.clone());
                    out.push(BrbMessage {
                        kind: BrbKind::Ready,
                        tag: self.tag,
                        payload: msg.payload.clone(),
                    });
                }
                if support >= th.ready_delivery && self.delivered.is_none() {
                    self.delivered = Some(msg.payload.clone());
                    events.push(ProtoEvent::BrbDelivered {
                        tag: self.tag,
                        payload: msg.payload.clone(),
                    });
                }
            }
        }
        out
    }

    /// Delivered payload, if any. Pure query.
    pub fn delivered(&self) -> Option<&[u8]> {
        self.delivered.as_deref()
    }

    /// Re-emit every contribution this node has made so far.
    ///
    /// Called from the owner's do-forever iteration; state is gossiped as-is,
    /// however inconsistent, and the layers above sort out the consequences.
    pub fn resend(&self) -> Vec<BrbMessage> {
        let mut out = Vec::new();
        if let Some(p) = &self.my_init {
            out.push(BrbMessage {
                kind: BrbKind::Init,
                tag: self.tag,
                payload: p.clone(),
            });
        }
        if let Some(p) = &self.echoed {
            out.push(BrbMessage {
                kind: BrbKind::Echo,
                tag: self.tag,
                payload: p.clone(),
            });
        }
        if let Some(p) = &self.readied {
            out.push(BrbMessage {
                kind: BrbKind::Ready,
                tag: self.tag,
                payload: p.clone(),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params4() -> SystemParams {
        SystemParams::new(4, 1).unwrap()
    }

    fn tag(sender: u16) -> BrbTag {
        BrbTag {
            phase: VbbPhase::Init,
            sender: NodeId(sender),
        }
    }

    fn ready(tag: BrbTag, payload: &[u8]) -> BrbMessage {
        BrbMessage {
            kind: BrbKind::Ready,
            tag,
            payload: payload.to_vec(),
        }
    }

    fn echo(tag: BrbTag, payload: &[u8]) -> BrbMessage {
        BrbMessage {
            kind: BrbKind::Echo,
            tag,
            payload: payload.to_vec(),
        }
    }

    #[test]
    fn broadcast_emits_init_and_is_idempotent() {
        let mut inst = BrbInstance::new(tag(2));
        let mut ev = Vec::new();
        let out = inst.broadcast(NodeId(2), b"m".to_vec(), &mut ev).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, BrbKind::Init);
        assert_eq!(out[0].payload, b"m");
        assert_eq!(ev.len(), 1);

        // Same payload: re-emitted, no new event.
        let out = inst.broadcast(NodeId(2), b"m".to_vec(), &mut ev).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(ev.len(), 1);

        // Different payload: ignored and flagged, INIT still carries the first.
        let out = inst.broadcast(NodeId(2), b"x".to_vec(), &mut ev).unwrap();
        assert_eq!(out[0].payload, b"m");
        assert!(matches!(ev.last(), Some(ProtoEvent::Anomaly { .. })));
    }

    #[test]
    fn broadcast_rejects_non_sender() {
        let mut inst = BrbInstance::new(tag(2));
        let err = inst
            .broadcast(NodeId(0), b"m".to_vec(), &mut Vec::new())
            .unwrap_err();
        assert!(matches!(err, BrbError::SenderMismatch { .. }));
    }

    #[test]
    fn three_readies_deliver() {
        // n=4, t=1: delivery threshold 2t+1 = 3.
        let mut inst = BrbInstance::new(tag(0));
        let mut ev = Vec::new();
        let p = params4();
        for from in [1u16, 2, 3] {
            inst.on_message(&p, NodeId(from), &ready(tag(0), b"m"), &mut ev);
        }
        assert_eq!(inst.delivered(), Some(&b"m"[..]));
        assert_eq!(
            ev.iter()
                .filter(|e| matches!(e, ProtoEvent::BrbDelivered { .. }))
                .count(),
            1
        );
    }

    #[test]
    fn two_echoes_are_below_ready_threshold() {
        // n=4, t=1: echo majority is 3.
        let mut inst = BrbInstance::new(tag(0));
        let mut ev = Vec::new();
        let p = params4();
        let out1 = inst.on_message(&p, NodeId(1), &echo(tag(0), b"m"), &mut ev);
        let out2 = inst.on_message(&p, NodeId(2), &echo(tag(0), b"m"), &mut ev);
        assert!(out1.is_empty() && out2.is_empty());
        assert_eq!(inst.readied, None);

        let out3 = inst.on_message(&p, NodeId(3), &echo(tag(0), b"m"), &mut ev);
        assert_eq!(out3.len(), 1);
        assert_eq!(out3[0].kind, BrbKind::Ready);
    }

    #[test]
    fn duplicate_and_conflicting_votes_are_absorbed() {
        let mut inst = BrbInstance::new(tag(0));
        let mut ev = Vec::new();
        let p = params4();
        inst.on_message(&p, NodeId(1), &ready(tag(0), b"m"), &mut ev);
        inst.on_message(&p, NodeId(1), &ready(tag(0), b"m"), &mut ev);
        // A second vote from the same node, even for another payload, is dropped.
        inst.on_message(&p, NodeId(1), &ready(tag(0), b"x"), &mut ev);
        assert_eq!(inst.readies.get(&b"m".to_vec()).unwrap().len(), 1);
        assert!(inst.readies.get(&b"x".to_vec()).is_none());
    }

    #[test]
    fn ready_amplification_at_t_plus_one() {
        let mut inst = BrbInstance::new(tag(0));
        let mut ev = Vec::new();
        let p = params4();
        inst.on_message(&p, NodeId(1), &ready(tag(0), b"m"), &mut ev);
        let out = inst.on_message(&p, NodeId(2), &ready(tag(0), b"m"), &mut ev);
        // t+1 = 2 readies: amplify with our own READY.
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, BrbKind::Ready);
        assert_eq!(inst.readied, Some(b"m".to_vec()));
    }

    #[test]
    fn conflicting_init_keeps_first() {
        let mut inst = BrbInstance::new(tag(0));
        let mut ev = Vec::new();
        let p = params4();
        let init_a = BrbMessage {
            kind: BrbKind::Init,
            tag: tag(0),
            payload: b"a".to_vec(),
        };
        let init_b = BrbMessage {
            kind: BrbKind::Init,
            tag: tag(0),
            payload: b"b".to_vec(),
        };
        let out = inst.on_message(&p, NodeId(0), &init_a, &mut ev);
        assert_eq!(out[0].payload, b"a");
        let out = inst.on_message(&p, NodeId(0), &init_b, &mut ev);
        assert!(out.is_empty());
        assert_eq!(inst.echoed, Some(b"a".to_vec()));
    }

    #[test]
    fn init_from_non_sender_is_flagged() {
        let mut inst = BrbInstance::new(tag(0));
        let mut ev = Vec::new();
        let init = BrbMessage {
            kind: BrbKind::Init,
            tag: tag(0),
            payload: b"a".to_vec(),
        };
        let out = inst.on_message(&params4(), NodeId(3), &init, &mut ev);
        assert!(out.is_empty());
        assert_eq!(inst.echoed, None);
        assert!(matches!(ev.last(), Some(ProtoEvent::Anomaly { .. })));
    }

    #[test]
    fn resend_reflects_current_contributions() {
        let mut inst = BrbInstance::new(tag(0));
        assert!(inst.resend().is_empty());

        inst.echoed = Some(b"m".to_vec());
        let out = inst.resend();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, BrbKind::Echo);

        // Injected inconsistency: readied without echoed is still gossiped.
        let mut inst = BrbInstance::new(tag(0));
        inst.readied = Some(b"m".to_vec());
        let out = inst.resend();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, BrbKind::Ready);
    }

    #[test]
    fn delivery_is_single_shot() {
        let mut inst = BrbInstance::new(tag(0));
        let mut ev = Vec::new();
        let p = params4();
        for from in [1u16, 2, 3] {
            inst.on_message(&p, NodeId(from), &ready(tag(0), b"m"), &mut ev);
        }
        assert_eq!(inst.delivered(), Some(&b"m"[..]));
        // A fourth vote for another payload cannot overwrite the slot.
        inst.on_message(&p, NodeId(0), &ready(tag(0), b"x"), &mut ev);
        assert_eq!(inst.delivered(), Some(&b"m"[..]));
    }
}
