//! Wire encoding for every protocol message, fixed in this one unit.
//!
//! Layouts (all integers little-endian):
//!
//! * BRB body: `kind:u8 (0=INIT 1=ECHO 2=READY), phase:u8 (0=init 1=valid), sender:u16, payload bytes`
//! * BV body:  `value:u8`
//! * BC body:  `kind:u8 (0=EST 1=AUX), round:u16, value:u8`
//! * Broadcast payload pair: `sender:u16, tag:u8 (0=token 1=flag), token: len:u16 + utf8 | flag: u8`
//!
//! Decoders are total: any byte string either parses or is reported as
//! malformed, so Byzantine noise and injected junk flow through the same
//! paths as honest traffic.

use crate::brb::{BrbKind, BrbMessage, BrbTag};
use crate::types::{NodeId, Value};
use serde::{Deserialize, Serialize};

/// Protocol layer an envelope belongs to.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum Layer {
    Brb,
    Bv,
    Bc,
}

/// Message phase of the two-phase broadcast composition.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum VbbPhase {
    Init,
    Valid,
}

impl VbbPhase {
    pub const ALL: [VbbPhase; 2] = [VbbPhase::Init, VbbPhase::Valid];

    pub fn index(self) -> usize {
        match self {
            VbbPhase::Init => 0,
            VbbPhase::Valid => 1,
        }
    }
}

/// Decoded content of a broadcast payload pair.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum PairContent {
    /// A value token (phase `init` format).
    Token(String),
    /// A raw flag byte (phase `valid` format); anything but 0/1 is ill-typed.
    Flag(u8),
}

/// A broadcast payload that parsed as a `(sender, content)` pair.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Pair {
    pub claimed_sender: NodeId,
    pub content: PairContent,
}

impl Pair {
    pub fn token(&self) -> Option<&str> {
        match &self.content {
            PairContent::Token(s) => Some(s),
            PairContent::Flag(_) => None,
        }
    }

    pub fn flag(&self) -> Option<bool> {
        match self.content {
            PairContent::Flag(0) => Some(false),
            PairContent::Flag(1) => Some(true),
            _ => None,
        }
    }
}

pub fn encode_value_pair(sender: NodeId, value: &Value) -> Vec<u8> {
    let token = value.as_str().as_bytes();
    let mut out = Vec::with_capacity(5 + token.len());
    out.extend_from_slice(&sender.0.to_le_bytes());
    out.push(0);
    out.extend_from_slice(&(token.len() as u16).to_le_bytes());
    out.extend_from_slice(token);
    out
}

pub fn encode_flag_pair(sender: NodeId, flag: bool) -> Vec<u8> {
    vec![sender.0.to_le_bytes()[0], sender.0.to_le_bytes()[1], 1, flag as u8]
}

/// Parse a payload as a `(sender, content)` pair; `None` means malformed.
pub fn decode_pair(bytes: &[u8]) -> Option<Pair> {
    if bytes.len() < 3 {
        return None;
    }
    let claimed_sender = NodeId(u16::from_le_bytes([bytes[0], bytes[1]]));
    match bytes[2] {
        0 => {
            if bytes.len() < 5 {
                return None;
            }
            let len = u16::from_le_bytes([bytes[3], bytes[4]]) as usize;
            if bytes.len() != 5 + len {
                return None;
            }
            let token = std::str::from_utf8(&bytes[5..]).ok()?.to_string();
            Some(Pair {
                claimed_sender,
                content: PairContent::Token(token),
            })
        }
        1 => {
            if bytes.len() != 4 {
                return None;
            }
            Some(Pair {
                claimed_sender,
                content: PairContent::Flag(bytes[3]),
            })
        }
        _ => None,
    }
}

pub fn encode_brb(msg: &BrbMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + msg.payload.len());
    out.push(match msg.kind {
        BrbKind::Init => 0,
        BrbKind::Echo => 1,
        BrbKind::Ready => 2,
    });
    out.push(msg.tag.phase.index() as u8);
    out.extend_from_slice(&msg.tag.sender.0.to_le_bytes());
    out.extend_from_slice(&msg.payload);
    out
}

pub fn decode_brb(bytes: &[u8]) -> Option<BrbMessage> {
    if bytes.len() < 4 {
        return None;
    }
    let kind = match bytes[0] {
        0 => BrbKind::Init,
        1 => BrbKind::Echo,
        2 => BrbKind::Ready,
        _ => return None,
    };
    let phase = match bytes[1] {
        0 => VbbPhase::Init,
        1 => VbbPhase::Valid,
        _ => return None,
    };
    let sender = NodeId(u16::from_le_bytes([bytes[2], bytes[3]]));
    Some(BrbMessage {
        kind,
        tag: BrbTag { phase, sender },
        payload: bytes[4..].to_vec(),
    })
}

pub fn encode_bv(value: bool) -> Vec<u8> {
    vec![value as u8]
}

/// Decode a BV body; the value byte must be 0 or 1.
pub fn decode_bv(bytes: &[u8]) -> Option<bool> {
    match bytes {
        [0] => Some(false),
        [1] => Some(true),
        _ => None,
    }
}

/// Binary-consensus round message.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BcMessage {
    /// Round-local estimate dissemination (binary-values style).
    Est { round: u16, value: bool },
    /// Round-local auxiliary vote over accepted values.
    Aux { round: u16, value: bool },
}

impl BcMessage {
    pub fn round(&self) -> u16 {
        match *self {
            BcMessage::Est { round, .. } | BcMessage::Aux { round, .. } => round,
        }
    }
}

pub fn encode_bc(msg: &BcMessage) -> Vec<u8> {
    let (kind, round, value) = match *msg {
        BcMessage::Est { round, value } => (0u8, round, value),
        BcMessage::Aux { round, value } => (1u8, round, value),
    };
    let mut out = Vec::with_capacity(4);
    out.push(kind);
    out.extend_from_slice(&round.to_le_bytes());
    out.push(value as u8);
    out
}

pub fn decode_bc(bytes: &[u8]) -> Option<BcMessage> {
    if bytes.len() != 4 {
        return None;
    }
    let round = u16::from_le_bytes([bytes[1], bytes[2]]);
    let value = match bytes[3] {
        0 => false,
        1 => true,
        _ => return None,
    };
    match bytes[0] {
        0 => Some(BcMessage::Est { round, value }),
        1 => Some(BcMessage::Aux { round, value }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn value_pair_round_trips(sender in 0u16..64, token in "[a-z]{0,12}") {
            let encoded = encode_value_pair(NodeId(sender), &Value(token.clone()));
            let pair = decode_pair(&encoded).unwrap();
            prop_assert_eq!(pair.claimed_sender, NodeId(sender));
            prop_assert_eq!(pair.token(), Some(token.as_str()));
        }

        #[test]
        fn brb_message_round_trips(
            kind in 0usize..3,
            phase in 0usize..2,
            sender in 0u16..64,
            payload in proptest::collection::vec(any::<u8>(), 0..24),
        ) {
            let msg = BrbMessage {
                kind: [BrbKind::Init, BrbKind::Echo, BrbKind::Ready][kind],
                tag: BrbTag { phase: VbbPhase::ALL[phase], sender: NodeId(sender) },
                payload,
            };
            prop_assert_eq!(decode_brb(&encode_brb(&msg)), Some(msg));
        }

        // Arbitrary bytes never panic the decoders.
        #[test]
        fn decoders_are_total(bytes in proptest::collection::vec(any::<u8>(), 0..32)) {
            let _ = decode_pair(&bytes);
            let _ = decode_brb(&bytes);
            let _ = decode_bv(&bytes);
            let _ = decode_bc(&bytes);
        }
    }

    #[test]
    fn flag_pair_distinguishes_ill_typed_flags() {
        let good = encode_flag_pair(NodeId(3), true);
        assert_eq!(decode_pair(&good).unwrap().flag(), Some(true));
        // A flag byte outside {0,1} parses as a pair but is not a boolean.
        let bad = vec![3, 0, 1, 7];
        let pair = decode_pair(&bad).unwrap();
        assert_eq!(pair.flag(), None);
        assert_eq!(pair.content, PairContent::Flag(7));
    }

    #[test]
    fn bc_round_trip() {
        let m = BcMessage::Aux { round: 513, value: true };
        assert_eq!(decode_bc(&encode_bc(&m)), Some(m));
    }
}
