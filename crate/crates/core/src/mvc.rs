//! Multivalued consensus built from the validated broadcast layer, one
//! binary consensus object, and one binary-values object.
//!
//! Each node validated-broadcasts its proposal. Once deliveries from `n-t`
//! senders are in, the node latches its `same_value` verdict (is there
//! exactly one validated value, supported by `n-2t` senders?), proposes the
//! verdict to binary consensus, and keeps re-broadcasting it through the
//! binary-values object. The result query maps the binary decision back to a
//! value: `false` means no common validated value (the error outcome), while
//! `true` releases the unique value once it reaches `n-2t` deliveries. The
//! binary-values test catches the corrupted case where binary consensus
//! claims `true` but no correct node ever attested it, which would otherwise
//! block the query forever.

use crate::bc::BcObject;
use crate::brb::BrbMessage;
use crate::bv::BvObject;
use crate::codec::BcMessage;
use crate::event::{BvScope, ProtoEvent};
use crate::types::{NodeId, Outcome, SystemParams, Value};
use crate::vbb::{VbbError, VbbNode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Messages produced by one do-forever iteration, per layer.
#[derive(Default, Debug)]
pub struct LayerOut {
    pub brb: Vec<BrbMessage>,
    pub bv: Vec<bool>,
    pub bc: Vec<BcMessage>,
}

/// Per-node consensus state. The binary objects start absent, which is the
/// post-recycling state.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MvcNode {
    pub id: NodeId,
    pub params: SystemParams,
    pub vbb: VbbNode,
    pub bv_obj: Option<BvObject>,
    pub bc_obj: Option<BcObject>,
    /// `same_value()` latched at the first attested iteration; the same
    /// boolean feeds both the binary consensus proposal and every
    /// binary-values re-broadcast of the epoch.
    pub latched_same_value: Option<bool>,
    pub round_cap: u16,
    pub coin_seed: u64,
}

impl MvcNode {
    pub fn new(
        id: NodeId,
        params: SystemParams,
        value_set: std::collections::BTreeSet<Value>,
        round_cap: u16,
        coin_seed: u64,
    ) -> Self {
        MvcNode {
            id,
            params,
            vbb: VbbNode::new(id, params, value_set),
            bv_obj: None,
            bc_obj: None,
            latched_same_value: None,
            round_cap,
            coin_seed,
        }
    }

    /// All delivery outcomes, indexed by sender. One pass feeds the
    /// threshold predicates below.
    pub fn deliveries(&self) -> Vec<Outcome<&Value>> {
        self.params
            .node_ids()
            .map(|k| self.vbb.vbb_deliver(k))
            .collect()
    }

    /// True once `n-t` senders have a non-pending delivery outcome; the
    /// error outcome counts as delivered.
    pub fn mc_echo(&self) -> bool {
        let resolved = self.deliveries().iter().filter(|o| !o.is_pending()).count();
        resolved >= self.params.thresholds().quorum_nt
    }

    /// True when one value holds `n-2t` deliveries and it is the only
    /// decided value across all senders.
    pub fn same_value(&self) -> bool {
        Self::same_value_of(&self.deliveries(), &self.params)
    }

    pub fn same_value_of(outcomes: &[Outcome<&Value>], params: &SystemParams) -> bool {
        let mut counts: BTreeMap<&Value, usize> = BTreeMap::new();
        for o in outcomes {
            if let Outcome::Decided(v) = o {
                *counts.entry(v).or_insert(0) += 1;
            }
        }
        counts.len() == 1
            && counts
                .values()
                .any(|&c| c >= params.thresholds().quorum_n2t)
    }

    /// Propose a value for this epoch. Re-proposing the same value is
    /// idempotent; a conflicting proposal is ignored and flagged downstream.
    pub fn propose(
        &mut self,
        v: &Value,
        events: &mut Vec<ProtoEvent>,
    ) -> Result<Vec<BrbMessage>, VbbError> {
        self.vbb.vbb_broadcast(v, events)
    }

    /// The consensus result query; pure, callable between any two steps.
    pub fn result(&self) -> Outcome<&Value> {
        let Some(bc) = &self.bc_obj else {
            return Outcome::Pending;
        };
        match bc.result() {
            Outcome::Pending => Outcome::Pending,
            // The binary object exhausting its round bound surfaces as the
            // error outcome here.
            Outcome::Error => Outcome::Error,
            Outcome::Decided(false) => Outcome::Error,
            Outcome::Decided(true) => {
                let outcomes = self.deliveries();
                let mut counts: BTreeMap<&Value, usize> = BTreeMap::new();
                for o in &outcomes {
                    if let Outcome::Decided(v) = o {
                        *counts.entry(v).or_insert(0) += 1;
                    }
                }
                // Deterministic pick: highest support, then smallest value.
                let quorum = self.params.thresholds().quorum_n2t;
                let winner = counts
                    .iter()
                    .filter(|(_, &c)| c >= quorum)
                    .max_by(|(va, ca), (vb, cb)| ca.cmp(cb).then(vb.cmp(va)));
                if let Some((v, _)) = winner {
                    return Outcome::Decided(v);
                }
                let bv_has_true = self.bv_obj.as_ref().is_some_and(|bv| bv.contains(true));
                if self.mc_echo() || !bv_has_true {
                    return Outcome::Error;
                }
                Outcome::Pending
            }
        }
    }

    pub fn on_bv_message(
        &mut self,
        from: NodeId,
        v: bool,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<bool> {
        let params = self.params;
        self.bv_obj.get_or_insert_with(BvObject::new).on_message(
            &params,
            BvScope::Consensus,
            from,
            v,
            events,
        )
    }

    pub fn on_bc_message(
        &mut self,
        from: NodeId,
        msg: BcMessage,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<BcMessage> {
        let params = self.params;
        match &mut self.bc_obj {
            // An inactive object ignores traffic; peers re-send every
            // iteration, so nothing is lost once it activates.
            None => Vec::new(),
            Some(bc) => bc.on_message(&params, from, msg, events),
        }
    }

    /// One do-forever iteration of the whole stack.
    pub fn tick(&mut self, events: &mut Vec<ProtoEvent>) -> LayerOut {
        let mut out = LayerOut {
            brb: self.vbb.vbb_tick(events),
            ..LayerOut::default()
        };

        if self.mc_echo() {
            let sv = match self.latched_same_value {
                Some(sv) => sv,
                None => {
                    let sv = self.same_value();
                    self.latched_same_value = Some(sv);
                    sv
                }
            };
            if self.bc_obj.is_none() {
                let mut bc = BcObject::new(self.round_cap, self.coin_seed);
                out.bc.extend(bc.propose(sv, events));
                self.bc_obj = Some(bc);
            }
            self.bv_obj
                .get_or_insert_with(BvObject::new)
                .bv_broadcast(BvScope::Consensus, sv, events);
        }

        if let Some(bv) = &self.bv_obj {
            out.bv.extend(bv.resend());
        }
        // An active binary object runs regardless of how it was activated;
        // this is what drags injected objects to completion.
        let params = self.params;
        if let Some(bc) = &mut self.bc_obj {
            out.bc.extend(bc.tick(&params, events));
        }
        out
    }

    /// Rebuild derived state after out-of-band mutation.
    pub fn rebuild_cache(&mut self) {
        self.vbb.rebuild_cache();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brb::BrbInstance;
    use crate::brb::BrbTag;
    use crate::codec::{self, VbbPhase};
    use std::collections::BTreeSet;

    fn value_set() -> BTreeSet<Value> {
        ["a", "b", "v", "w"].iter().map(|t| Value::from(*t)).collect()
    }

    fn node(n: usize, t: usize, id: u16) -> MvcNode {
        MvcNode::new(NodeId(id), SystemParams::new(n, t).unwrap(), value_set(), 30, 7)
    }

    fn set_delivered(node: &mut MvcNode, phase: VbbPhase, sender: u16, payload: Vec<u8>) {
        let tag = BrbTag {
            phase,
            sender: NodeId(sender),
        };
        let inst =
            node.vbb.brb[phase.index()][sender as usize].get_or_insert_with(|| BrbInstance::new(tag));
        inst.delivered = Some(payload);
        node.rebuild_cache();
    }

    /// Resolve sender `k` to a decided value at this node.
    fn resolve_decided(node: &mut MvcNode, sender: u16, token: &str) {
        set_delivered(
            node,
            VbbPhase::Init,
            sender,
            codec::encode_value_pair(NodeId(sender), &Value::from(token)),
        );
        set_delivered(
            node,
            VbbPhase::Valid,
            sender,
            codec::encode_flag_pair(NodeId(sender), true),
        );
    }

    /// Resolve sender `k` to the error outcome via a phase-order violation.
    fn resolve_error(node: &mut MvcNode, sender: u16) {
        set_delivered(
            node,
            VbbPhase::Valid,
            sender,
            codec::encode_flag_pair(NodeId(sender), true),
        );
    }

    #[test]
    fn mc_echo_fresh_is_false() {
        assert!(!node(4, 1, 0).mc_echo());
    }

    #[test]
    fn mc_echo_counts_errors_as_resolved() {
        // Outcomes {decided(a), error, decided(a), pending} -> 3 >= n-t.
        let mut n = node(4, 1, 0);
        resolve_decided(&mut n, 0, "a");
        resolve_error(&mut n, 1);
        resolve_decided(&mut n, 2, "a");
        assert_eq!(n.vbb.vbb_deliver(NodeId(1)), Outcome::Error);
        assert!(n.mc_echo());
    }

    #[test]
    fn mc_echo_needs_quorum() {
        let mut n = node(10, 3, 0);
        for k in 0..6 {
            resolve_decided(&mut n, k, "v");
        }
        assert!(!n.mc_echo()); // 6 < n-t = 7
        resolve_decided(&mut n, 6, "v");
        assert!(n.mc_echo());
    }

    #[test]
    fn same_value_spec_examples() {
        // 4 decided(v), 3 error, 3 pending -> true.
        let mut n = node(10, 3, 0);
        for k in 0..4 {
            resolve_decided(&mut n, k, "v");
        }
        for k in 4..7 {
            resolve_error(&mut n, k);
        }
        assert!(n.same_value());

        // 4 decided(v), 3 decided(w) -> false: two distinct decided values.
        // A fourth init-phase delivery of w gives it the n-2t support it
        // needs to validate at senders 4..6 without resolving sender 7.
        let mut n = node(10, 3, 0);
        for k in 0..4 {
            resolve_decided(&mut n, k, "v");
        }
        for k in 4..7 {
            resolve_decided(&mut n, k, "w");
        }
        set_delivered(
            &mut n,
            VbbPhase::Init,
            7,
            codec::encode_value_pair(NodeId(7), &Value::from("w")),
        );
        for k in 4..7u16 {
            assert_eq!(
                n.vbb.vbb_deliver(NodeId(k)),
                Outcome::Decided(&Value::from("w"))
            );
        }
        assert!(!n.same_value());

        // All pending -> false.
        assert!(!node(10, 3, 0).same_value());
    }

    #[test]
    fn result_fresh_is_pending() {
        assert_eq!(node(4, 1, 0).result(), Outcome::Pending);
    }

    #[test]
    fn result_maps_binary_false_to_error() {
        let mut n = node(4, 1, 0);
        let mut bc = BcObject::new(30, 7);
        bc.decision = Outcome::Decided(false);
        n.bc_obj = Some(bc);
        assert_eq!(n.result(), Outcome::Error);
    }

    #[test]
    fn result_maps_binary_round_cap_error_to_error() {
        let mut n = node(4, 1, 0);
        let mut bc = BcObject::new(30, 7);
        bc.decision = Outcome::Error;
        n.bc_obj = Some(bc);
        assert_eq!(n.result(), Outcome::Error);
    }

    #[test]
    fn result_releases_supported_value_on_true() {
        let mut n = node(4, 1, 0);
        resolve_decided(&mut n, 0, "a");
        resolve_decided(&mut n, 1, "a");
        let mut bc = BcObject::new(30, 7);
        bc.decision = Outcome::Decided(true);
        n.bc_obj = Some(bc);
        assert_eq!(n.result(), Outcome::Decided(&Value::from("a")));
    }

    #[test]
    fn result_consistency_test_on_unattested_true() {
        // Binary consensus claims true, but deliveries never agree and the
        // binary-values object never accepted true: the query must resolve
        // to the error outcome rather than block.
        let mut n = node(4, 1, 0);
        let mut bc = BcObject::new(30, 7);
        bc.decision = Outcome::Decided(true);
        n.bc_obj = Some(bc);
        // No deliveries at all: mc_echo is false and binValues is empty,
        // so the second clause fires.
        assert_eq!(n.result(), Outcome::Error);
    }

    #[test]
    fn result_waits_when_true_is_plausible() {
        // bc decided true, binValues contains true, mc_echo still false:
        // the run is simply not finished, keep pending.
        let mut n = node(4, 1, 0);
        let mut bc = BcObject::new(30, 7);
        bc.decision = Outcome::Decided(true);
        n.bc_obj = Some(bc);
        let mut bv = BvObject::new();
        bv.bin_values[1] = true;
        bv.accepted_order.push(true);
        n.bv_obj = Some(bv);
        assert_eq!(n.result(), Outcome::Pending);
    }

    #[test]
    fn tick_latches_same_value() {
        let mut n = node(4, 1, 1);
        for k in 0..3 {
            resolve_decided(&mut n, k, "a");
        }
        let out = n.tick(&mut Vec::new());
        assert_eq!(n.latched_same_value, Some(true));
        assert!(n.bc_obj.is_some());
        assert_eq!(n.bc_obj.as_ref().unwrap().proposal, Some(true));
        assert!(!out.bv.is_empty());

        // Later deliveries cannot change the latched verdict.
        resolve_decided(&mut n, 3, "b");
        n.tick(&mut Vec::new());
        assert_eq!(n.latched_same_value, Some(true));
    }

    #[test]
    fn tick_before_quorum_stays_quiet() {
        let mut n = node(4, 1, 1);
        let out = n.tick(&mut Vec::new());
        assert!(n.bc_obj.is_none());
        assert!(n.bv_obj.is_none());
        assert!(out.bv.is_empty() && out.bc.is_empty());
    }

    #[test]
    fn bc_traffic_is_dropped_while_inactive() {
        let mut n = node(4, 1, 1);
        let out = n.on_bc_message(
            NodeId(0),
            BcMessage::Est {
                round: 1,
                value: true,
            },
            &mut Vec::new(),
        );
        assert!(out.is_empty());
        assert!(n.bc_obj.is_none());
    }

    #[test]
    fn bv_traffic_activates_object() {
        let mut n = node(4, 1, 1);
        n.on_bv_message(NodeId(0), true, &mut Vec::new());
        assert!(n.bv_obj.is_some());
    }
}
