//! Desk-scale simulation and verification harness for self-stabilizing
//! Byzantine- and intrusion-tolerant multivalued consensus.
//!
//! The protocol stack is layered the way the deployed system would be:
//! reliable broadcast instances ([`brb`]) feed a validated broadcast
//! composition ([`vbb`]), which together with a binary-values object
//! ([`bv`]) and a binary consensus object ([`bc`]) forms the multivalued
//! consensus node ([`mvc`]). Every per-epoch object starts from an absent
//! (post-recycling) state, re-emits its contributions on each do-forever
//! iteration, and exposes pure result queries, so the stack keeps working
//! after arbitrary state corruption: a completed epoch is recycled
//! ([`recycler`]) and the next one starts from the canonical initial state.
//!
//! Execution is simulated: [`simnet`] provides a deterministic
//! discrete-event world with bounded lossy channels and a seeded fair
//! scheduler, [`faults`] supplies Byzantine strategies and the
//! transient-fault injector, and [`runner`]/[`properties`] drive scenarios
//! and judge every named protocol property. [`reference`] carries the
//! original blocking-style reduction as a differential oracle.

pub mod bc;
pub mod brb;
pub mod bv;
pub mod codec;
pub mod event;
pub mod faults;
pub mod mvc;
pub mod node;
pub mod properties;
pub mod recycler;
pub mod reference;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod simnet;
pub mod types;
pub mod vbb;

pub use types::{NodeId, Outcome, SystemParams, Value};
