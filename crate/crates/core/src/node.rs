//! Node wrapper: routes envelopes into the protocol state machines and
//! wraps their emissions back into addressed messages.

use crate::codec::{self, Layer};
use crate::event::ProtoEvent;
use crate::faults::ByzantineNode;
use crate::mvc::{LayerOut, MvcNode};
use crate::reference::RefNode;
use crate::simnet::{Envelope, Outbound};
use crate::types::{NodeId, Outcome, SystemParams, Value};
use rand_chacha::ChaCha8Rng;

pub enum Behavior {
    /// The self-stabilizing consensus stack.
    Correct(MvcNode),
    /// The non-stabilizing blocking-style stack, used as differential oracle.
    Reference(RefNode),
    /// An adversarial strategy.
    Byzantine(ByzantineNode),
}

pub struct NodeSlot {
    pub id: NodeId,
    pub behavior: Behavior,
}

/// Expand per-layer broadcast messages into one envelope per destination.
pub fn layer_out_to_outbound(out: LayerOut, params: &SystemParams) -> Vec<Outbound> {
    let mut res = Vec::new();
    for msg in &out.brb {
        let body = codec::encode_brb(msg);
        for dst in params.node_ids() {
            res.push(Outbound {
                dst,
                layer: Layer::Brb,
                body: body.clone(),
            });
        }
    }
    for &v in &out.bv {
        let body = codec::encode_bv(v);
        for dst in params.node_ids() {
            res.push(Outbound {
                dst,
                layer: Layer::Bv,
                body: body.clone(),
            });
        }
    }
    for msg in &out.bc {
        let body = codec::encode_bc(msg);
        for dst in params.node_ids() {
            res.push(Outbound {
                dst,
                layer: Layer::Bc,
                body: body.clone(),
            });
        }
    }
    res
}

/// Decode an envelope and feed it to an honest consensus node.
pub fn handle_envelope_honest(
    node: &mut MvcNode,
    env: &Envelope,
    params: &SystemParams,
    events: &mut Vec<ProtoEvent>,
) -> Vec<Outbound> {
    let mut out = LayerOut::default();
    match env.layer {
        Layer::Brb => match codec::decode_brb(&env.body) {
            Some(msg) => out.brb = node.vbb.on_brb_message(env.src, &msg, events),
            None => events.push(ProtoEvent::Anomaly {
                what: "undecodable broadcast body".to_string(),
            }),
        },
        Layer::Bv => match codec::decode_bv(&env.body) {
            Some(v) => out.bv = node.on_bv_message(env.src, v, events),
            None => events.push(ProtoEvent::Anomaly {
                what: "undecodable binary-values body".to_string(),
            }),
        },
        Layer::Bc => match codec::decode_bc(&env.body) {
            Some(msg) => out.bc = node.on_bc_message(env.src, msg, events),
            None => events.push(ProtoEvent::Anomaly {
                what: "undecodable consensus body".to_string(),
            }),
        },
    }
    layer_out_to_outbound(out, params)
}

impl NodeSlot {
    pub fn is_correct(&self) -> bool {
        matches!(self.behavior, Behavior::Correct(_))
    }

    /// The node's consensus result, `None` for adversarial slots.
    pub fn result(&self) -> Option<Outcome<Value>> {
        match &self.behavior {
            Behavior::Correct(node) => Some(node.result().cloned()),
            Behavior::Reference(node) => Some(node.result()),
            Behavior::Byzantine(_) => None,
        }
    }

    pub fn correct(&self) -> Option<&MvcNode> {
        match &self.behavior {
            Behavior::Correct(node) => Some(node),
            _ => None,
        }
    }

    pub fn correct_mut(&mut self) -> Option<&mut MvcNode> {
        match &mut self.behavior {
            Behavior::Correct(node) => Some(node),
            _ => None,
        }
    }

    /// Invoke the propose operation as the scenario prescribes.
    pub fn propose(
        &mut self,
        v: &Value,
        params: &SystemParams,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<Outbound> {
        match &mut self.behavior {
            Behavior::Correct(node) => match node.propose(v, events) {
                Ok(msgs) => layer_out_to_outbound(
                    LayerOut {
                        brb: msgs,
                        ..LayerOut::default()
                    },
                    params,
                ),
                Err(e) => {
                    events.push(ProtoEvent::Anomaly {
                        what: format!("propose rejected: {e}"),
                    });
                    Vec::new()
                }
            },
            Behavior::Reference(node) => node.propose(v, params, events),
            Behavior::Byzantine(byz) => {
                // Only the collusion strategy proposes; it runs the honest
                // protocol with the adversary's value.
                if let Some(honest) = &mut byz.honest {
                    match honest.propose(v, events) {
                        Ok(msgs) => {
                            return layer_out_to_outbound(
                                LayerOut {
                                    brb: msgs,
                                    ..LayerOut::default()
                                },
                                params,
                            )
                        }
                        Err(_) => return Vec::new(),
                    }
                }
                Vec::new()
            }
        }
    }

    pub fn on_envelope(
        &mut self,
        env: &Envelope,
        params: &SystemParams,
        _rng: &mut ChaCha8Rng,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<Outbound> {
        match &mut self.behavior {
            Behavior::Correct(node) => handle_envelope_honest(node, env, params, events),
            Behavior::Reference(node) => node.on_envelope(env, params, events),
            Behavior::Byzantine(byz) => byz.on_envelope(env, params, events),
        }
    }

    pub fn tick(
        &mut self,
        params: &SystemParams,
        _rng: &mut ChaCha8Rng,
        events: &mut Vec<ProtoEvent>,
    ) -> Vec<Outbound> {
        match &mut self.behavior {
            Behavior::Correct(node) => layer_out_to_outbound(node.tick(events), params),
            Behavior::Reference(node) => node.tick(params, events),
            Behavior::Byzantine(byz) => {
                let id = self.id;
                byz.tick(id, params, events)
            }
        }
    }
}
