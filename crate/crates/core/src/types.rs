//! Shared domain vocabulary: node identifiers, proposal values, the
//! three-valued protocol outcome, and quorum threshold arithmetic.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Identifier of a node, an index in `[0, n)`.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize, Default,
)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A proposal value, one token out of the scenario's finite value set `V`.
///
/// The pending and error outcomes are deliberately *not* representable here;
/// they live in [`Outcome`] so that no sentinel string can be confused with
/// a real value.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Value(pub String);

impl Value {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value(s.to_string())
    }
}

impl std::borrow::Borrow<str> for Value {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Three-valued result of a protocol query: still pending, the error symbol,
/// or a decided payload.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Outcome<T> {
    /// Nothing to report yet.
    Pending,
    /// The error symbol: no validated value / inconsistency detected.
    Error,
    /// A decided payload.
    Decided(T),
}

impl<T> Outcome<T> {
    pub fn is_pending(&self) -> bool {
        matches!(self, Outcome::Pending)
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Outcome::Error)
    }

    pub fn decided(&self) -> Option<&T> {
        match self {
            Outcome::Decided(v) => Some(v),
            _ => None,
        }
    }
}

impl<'a, T: Clone> Outcome<&'a T> {
    pub fn cloned(self) -> Outcome<T> {
        match self {
            Outcome::Pending => Outcome::Pending,
            Outcome::Error => Outcome::Error,
            Outcome::Decided(v) => Outcome::Decided(v.clone()),
        }
    }
}

impl<T: fmt::Display> fmt::Display for Outcome<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Pending => write!(f, "pending"),
            Outcome::Error => write!(f, "error"),
            Outcome::Decided(v) => write!(f, "decided({v})"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("system of n={n} nodes cannot tolerate t={t} Byzantine nodes (need 3t+1 <= n)")]
    ResilienceBound { n: usize, t: usize },
    #[error("system needs at least one node")]
    Empty,
}

/// System size `n` and Byzantine bound `t`, with `3t + 1 <= n`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SystemParams {
    n: usize,
    t: usize,
}

impl SystemParams {
    pub fn new(n: usize, t: usize) -> Result<Self, ParamsError> {
        if n == 0 {
            return Err(ParamsError::Empty);
        }
        if n < 3 * t + 1 {
            return Err(ParamsError::ResilienceBound { n, t });
        }
        Ok(SystemParams { n, t })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n as u16).map(NodeId)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.n
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            quorum_nt: self.n - self.t,
            quorum_n2t: self.n - 2 * self.t,
            plurality_t1: self.t + 1,
            echo_majority: (self.n + self.t) / 2 + 1,
            ready_delivery: 2 * self.t + 1,
        }
    }
}

/// The five vote thresholds used across the broadcast and consensus layers.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Thresholds {
    /// `n - t`: deliveries needed to attest a phase (vbbEcho / mcEcho).
    pub quorum_nt: usize,
    /// `n - 2t`: matching deliveries needed to validate a value.
    pub quorum_n2t: usize,
    /// `t + 1`: enough votes to contain at least one correct node.
    pub plurality_t1: usize,
    /// `floor((n + t) / 2) + 1`: echo majority before emitting READY.
    pub echo_majority: usize,
    /// `2t + 1`: READY votes required for delivery.
    pub ready_delivery: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thresholds_smallest_legal_system() {
        let p = SystemParams::new(4, 1).unwrap();
        let th = p.thresholds();
        assert_eq!(
            (
                th.quorum_nt,
                th.quorum_n2t,
                th.plurality_t1,
                th.echo_majority,
                th.ready_delivery
            ),
            (3, 2, 2, 3, 3)
        );
    }

    #[test]
    fn thresholds_ten_nodes() {
        let p = SystemParams::new(10, 3).unwrap();
        let th = p.thresholds();
        assert_eq!(
            (
                th.quorum_nt,
                th.quorum_n2t,
                th.plurality_t1,
                th.echo_majority,
                th.ready_delivery
            ),
            (7, 4, 4, 7, 7)
        );
    }

    #[test]
    fn rejects_insufficient_resilience() {
        assert_eq!(
            SystemParams::new(3, 1),
            Err(ParamsError::ResilienceBound { n: 3, t: 1 })
        );
        assert!(SystemParams::new(0, 0).is_err());
        assert!(SystemParams::new(1, 0).is_ok());
        assert!(SystemParams::new(7, 2).is_ok());
    }

    proptest! {
        // n-2t >= t+1 for every legal (n, t); the closure arguments lean on it.
        #[test]
        fn validation_quorum_contains_a_correct_node(t in 0usize..20, extra in 0usize..20) {
            let n = 3 * t + 1 + extra;
            let th = SystemParams::new(n, t).unwrap().thresholds();
            prop_assert!(th.quorum_n2t >= th.plurality_t1);
        }

        // Two echo majorities intersect in at least one correct node.
        #[test]
        fn echo_majorities_intersect_correctly(t in 0usize..20, extra in 0usize..20) {
            let n = 3 * t + 1 + extra;
            let th = SystemParams::new(n, t).unwrap().thresholds();
            prop_assert!(2 * th.echo_majority >= n + t + 1);
            prop_assert!(2 * th.echo_majority - n >= th.plurality_t1);
        }
    }
}
