//! Semantic milestones reported by the protocol state machines.
//!
//! Handlers push these as they mutate state; the simulator stamps them with
//! the step counter and node id. The property checkers consume the resulting
//! log instead of re-scanning node state after every step.

use crate::brb::BrbTag;
use crate::types::{NodeId, Outcome};

/// Which binary-values object an event belongs to: the consensus-level one
/// or a round-local one inside the binary consensus object.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BvScope {
    Consensus,
    Round(u16),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ProtoEvent {
    /// A broadcast instance was seeded with this node's payload.
    BrbBroadcast { tag: BrbTag, payload: Vec<u8> },
    /// A broadcast instance crossed the delivery threshold.
    BrbDelivered { tag: BrbTag, payload: Vec<u8> },
    /// First binary-values broadcast of this value by this node.
    BvInput { scope: BvScope, value: bool },
    /// A value crossed the acceptance threshold into `bin_values`.
    BinValue { scope: BvScope, value: bool },
    /// The binary consensus object was activated with this proposal.
    BcProposed { value: bool },
    /// The binary consensus object settled.
    BcDecided { outcome: Outcome<bool> },
    /// Something off-protocol was observed and absorbed.
    Anomaly { what: String },
}

/// An event stamped with where and when it happened.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StampedEvent {
    pub step: u64,
    pub node: NodeId,
    pub event: ProtoEvent,
}
