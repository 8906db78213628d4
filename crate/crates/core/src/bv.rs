//! Binary-values broadcast: all-to-all dissemination of booleans.
//!
//! A value enters `bin_values` once `2t+1` distinct nodes have sent it, and
//! is relayed as soon as `t+1` have (so one correct supporter suffices to
//! spread it). A value only Byzantine nodes send can therefore never be
//! accepted by a correct node.

use crate::event::{BvScope, ProtoEvent};
use crate::types::{NodeId, SystemParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// State of one binary-values object at one node.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct BvObject {
    /// Value this node is broadcasting; latched on the first call.
    pub my_value: Option<bool>,
    /// Votes received, indexed by the value (`[false, true]`).
    pub received: [BTreeSet<NodeId>; 2],
    /// Values this node has relayed, indexed by the value.
    pub relayed: [bool; 2],
    /// Accepted values, indexed by the value. Grows monotonically.
    pub bin_values: [bool; 2],
    /// Acceptance order; the consensus rounds take the first entry.
    pub accepted_order: Vec<bool>,
}

impl BvObject {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bin_values(&self) -> BTreeSet<bool> {
        let mut s = BTreeSet::new();
        if self.bin_values[0] {
            s.insert(false);
        }
        if self.bin_values[1] {
            s.insert(true);
        }
        s
    }

    pub fn contains(&self, v: bool) -> bool {
        self.bin_values[v as usize]
    }

    pub fn first_accepted(&self) -> Option<bool> {
        self.accepted_order.first().copied()
    }

    /// Broadcast `v`; the first value of the epoch is latched and later calls
    /// with a different one keep the first and flag the attempt.
    pub fn bv_broadcast(
        &mut self,
        scope: BvScope,
        v: bool,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<bool> {
        match self.my_value {
            None => {
                self.my_value = Some(v);
                events.push(ProtoEvent::BvInput { scope, value: v });
            }
            Some(existing) if existing != v => {
                events.push(ProtoEvent::Anomaly {
                    what: "conflicting bv_broadcast ignored".to_string(),
                });
            }
            Some(_) => {}
        }
        vec![self.my_value.expect("set above")]
    }

    /// Record a vote for `v` from `from`; duplicates are absorbed. A node may
    /// legitimately vote for both values over the course of an epoch.
    pub fn on_message(
        &mut self,
        params: &SystemParams,
        scope: BvScope,
        from: NodeId,
        v: bool,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<bool> {
        let th = params.thresholds();
        self.received[v as usize].insert(from);
        let support = self.received[v as usize].len();
        let mut out = Vec::new();
        if support >= th.plurality_t1 && !self.relayed[v as usize] {
            self.relayed[v as usize] = true;
            out.push(v);
        }
        if support >= th.ready_delivery && !self.bin_values[v as usize] {
            self.bin_values[v as usize] = true;
            self.accepted_order.push(v);
            events.push(ProtoEvent::BinValue { scope, value: v });
        }
        out
    }

    /// Values to re-emit on a do-forever iteration: the latched input plus
    /// everything relayed so far, deduplicated.
    pub fn resend(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for v in [false, true] {
            if self.my_value == Some(v) || self.relayed[v as usize] {
                out.push(v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params4() -> SystemParams {
        SystemParams::new(4, 1).unwrap()
    }

    const SCOPE: BvScope = BvScope::Consensus;

    #[test]
    fn broadcast_latches_first_value() {
        let mut obj = BvObject::new();
        let mut ev = Vec::new();
        assert_eq!(obj.bv_broadcast(SCOPE, true, &mut ev), vec![true]);
        assert_eq!(obj.bv_broadcast(SCOPE, true, &mut ev), vec![true]);
        assert_eq!(ev.len(), 1);
        // A different value keeps the latch and raises an anomaly.
        assert_eq!(obj.bv_broadcast(SCOPE, false, &mut ev), vec![true]);
        assert!(matches!(ev.last(), Some(ProtoEvent::Anomaly { .. })));
    }

    #[test]
    fn relays_at_t_plus_one_accepts_at_2t_plus_one() {
        let mut obj = BvObject::new();
        let mut ev = Vec::new();
        let p = params4();
        assert!(obj.on_message(&p, SCOPE, NodeId(0), true, &mut ev).is_empty());
        // Second distinct vote (t+1 = 2): relay, but not yet accepted.
        let out = obj.on_message(&p, SCOPE, NodeId(1), true, &mut ev);
        assert_eq!(out, vec![true]);
        assert!(obj.bin_values().is_empty());
        // Third distinct vote (2t+1 = 3): accepted.
        obj.on_message(&p, SCOPE, NodeId(2), true, &mut ev);
        assert!(obj.contains(true));
        assert_eq!(obj.first_accepted(), Some(true));
    }

    #[test]
    fn byzantine_minority_cannot_seed_acceptance() {
        // With t=1 a single faulty voter never reaches the relay threshold.
        let mut obj = BvObject::new();
        let mut ev = Vec::new();
        let p = params4();
        for _ in 0..10 {
            obj.on_message(&p, SCOPE, NodeId(3), false, &mut ev);
        }
        assert!(!obj.relayed[0]);
        assert!(obj.bin_values().is_empty());
    }

    #[test]
    fn fresh_object_reports_empty() {
        let obj = BvObject::new();
        assert!(obj.bin_values().is_empty());
        assert!(obj.resend().is_empty());
    }

    proptest! {
        // bin_values only grows, and every accepted value has 2t+1 support;
        // checked against a brute-force recount of the vote stream.
        #[test]
        fn acceptance_matches_recount(
            votes in proptest::collection::vec((0u16..7, any::<bool>()), 0..60)
        ) {
            let p = SystemParams::new(7, 2).unwrap();
            let mut obj = BvObject::new();
            let mut ev = Vec::new();
            let mut prev_len = 0;
            for (from, v) in &votes {
                obj.on_message(&p, SCOPE, NodeId(*from), *v, &mut ev);
                let len = obj.bin_values().len();
                prop_assert!(len >= prev_len);
                prev_len = len;
            }
            for v in [false, true] {
                let distinct: BTreeSet<u16> = votes
                    .iter()
                    .filter(|(_, w)| *w == v)
                    .map(|(f, _)| *f)
                    .collect();
                prop_assert_eq!(obj.contains(v), distinct.len() >= 5);
                prop_assert_eq!(obj.relayed[v as usize], distinct.len() >= 3);
            }
        }
    }
}
