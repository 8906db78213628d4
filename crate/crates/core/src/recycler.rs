//! Idealized object recycling: observes global completion and resets every
//! per-epoch object to the post-recycling state.
//!
//! The oracle is omniscient by design: it reads node state directly between
//! steps instead of running a distributed mechanism, which the surrounding
//! system is assumed to provide.

use crate::faults::ByzantineNode;
use crate::mvc::MvcNode;
use crate::node::Behavior;
use crate::reference::RefNode;
use crate::simnet::{epoch_coin_seed, SimWorld, TraceKind, TraceRecord};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecycleError {
    #[error("recycling requires every deliverable node to have a non-pending result")]
    NotCompleted,
}

/// True once every correct node's result query has left the pending state.
pub fn completed(world: &SimWorld) -> bool {
    let results: Vec<_> = world.results().into_iter().flatten().collect();
    !results.is_empty() && results.iter().all(|r| !r.is_pending())
}

/// Advance the epoch: reset every node's per-epoch state to its canonical
/// initial value and purge all channels.
pub fn recycle(world: &mut SimWorld) -> Result<(), RecycleError> {
    if !completed(world) {
        return Err(RecycleError::NotCompleted);
    }
    world.epoch += 1;
    world.epoch_steps = 0;
    let params = world.config.params;
    let value_set = world.config.value_set.clone();
    let round_cap = world.config.round_cap;
    let coin_seed = epoch_coin_seed(world.config.seed, world.epoch);
    for slot in &mut world.nodes {
        let id = slot.id;
        match &mut slot.behavior {
            Behavior::Correct(node) => {
                *node = MvcNode::new(id, params, value_set.clone(), round_cap, coin_seed);
            }
            Behavior::Reference(node) => {
                *node = RefNode::new(id, params, value_set.clone(), round_cap, coin_seed);
            }
            Behavior::Byzantine(ByzantineNode { honest, .. }) => {
                if let Some(node) = honest {
                    *node = MvcNode::new(id, params, value_set.clone(), round_cap, coin_seed);
                }
            }
        }
    }
    for src in params.node_ids() {
        for dst in params.node_ids() {
            world.channel_mut(src, dst).clear();
        }
    }
    let step = world.clock;
    let epoch = world.epoch;
    world.record(TraceRecord {
        step,
        kind: TraceKind::Recycle,
        src: None,
        dst: None,
        protocol: None,
        summary: format!("epoch {epoch}"),
    });
    Ok(())
}

/// Serialized state of a correct node under the fixed serialization; the
/// post-recycling check compares this byte-for-byte with a fresh node.
pub fn state_dump(node: &MvcNode) -> Vec<u8> {
    serde_json::to_vec(node).expect("node state serializes")
}
