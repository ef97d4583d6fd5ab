//! Time-layered reachable state spaces of interaction points.
//!
//! For every interaction point the joint states reachable at each time step
//! `0..=h` are materialized by forward expansion from the joint initial state,
//! together with the available joint actions, their utilities and successor
//! distributions. The ambient state spaces are never enumerated.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{JointActionCodec, MccSspInstance, StateId};

/// An available joint action at a layer node.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionEdge {
    pub joint_action: usize,
    /// Owner-filtered joint utility.
    pub utility: f64,
    /// `(index in the next layer, probability)`, sorted by index.
    pub successors: Vec<(usize, f64)>,
}

/// Reachable joint states at one time step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layer {
    /// Joint states, sorted lexicographically.
    pub states: Vec<Vec<StateId>>,
    /// `risk[j][s]`: aggregate failure probability of state `s` under
    /// criterion `j`.
    pub risk: Vec<Vec<f64>>,
    /// Outgoing edges per state, in increasing joint action order. Empty for
    /// the last layer.
    pub edges: Vec<Vec<ActionEdge>>,
}

impl Layer {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn find(&self, joint: &[StateId]) -> Option<usize> {
        self.states
            .binary_search_by(|s| s.as_slice().cmp(joint))
            .ok()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLayers {
    pub members: Vec<usize>,
    pub codec: JointActionCodec,
    /// Layers `0..=h`.
    pub layers: Vec<Layer>,
}

impl InteractionLayers {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::len).collect()
    }

    /// Number of `(state, action)` pairs at decision layers `0..h`.
    pub fn num_decisions(&self) -> usize {
        self.layers.iter().map(Layer::num_edges).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredSpace {
    pub interactions: Vec<InteractionLayers>,
    pub horizon: usize,
    pub num_criteria: usize,
}

impl LayeredSpace {
    /// Total aggregate risk of the initial joint states under criterion `j`.
    pub fn initial_risk(&self, j: usize) -> f64 {
        self.interactions
            .iter()
            .map(|il| il.layers[0].risk[j][0])
            .sum()
    }
}

/// Forward-expands every interaction point for `instance.horizon` steps,
/// keeping only states reached with positive probability.
pub fn reachable_layers(instance: &MccSspInstance) -> LayeredSpace {
    let h = instance.horizon;
    let n_criteria = instance.num_criteria();
    let mut caches: Vec<AgentCache> = instance
        .agents
        .iter()
        .map(|_| AgentCache::default())
        .collect();
    let mut interactions = Vec::with_capacity(instance.interactions.len());

    for point in &instance.interactions {
        let codec = JointActionCodec::new(
            point
                .members
                .iter()
                .map(|&m| instance.agents[m].num_actions())
                .collect(),
        );
        let s0: Vec<StateId> = point
            .members
            .iter()
            .map(|&m| instance.agents[m].initial_state())
            .collect();
        let mut layers: Vec<Layer> = Vec::with_capacity(h + 1);
        let mut current = vec![s0];

        for k in 0..=h {
            let mut layer = Layer {
                states: current,
                risk: Vec::new(),
                edges: Vec::new(),
            };
            let terminal_zeroed = k == h && !instance.include_terminal_risk;
            layer.risk = point
                .risks
                .iter()
                .map(|r| {
                    layer
                        .states
                        .iter()
                        .map(|s| {
                            if terminal_zeroed {
                                0.0
                            } else {
                                r.state_risk(s)
                            }
                        })
                        .collect()
                })
                .collect();
            if layer.risk.len() < n_criteria {
                layer.risk.resize(n_criteria, vec![0.0; layer.states.len()]);
            }
            if k == h {
                layers.push(layer);
                break;
            }

            // Successor tuples per edge, before the next layer is indexed.
            let mut raw: Vec<Vec<(usize, Vec<(Vec<StateId>, f64)>)>> =
                Vec::with_capacity(layer.len());
            let mut next: BTreeMap<Vec<StateId>, usize> = BTreeMap::new();
            for joint in &layer.states {
                for (&m, &s) in point.members.iter().zip(joint) {
                    caches[m].ensure(instance.agents[m].as_ref(), s);
                }
                let per_member: Vec<&AgentEntry> = point
                    .members
                    .iter()
                    .zip(joint)
                    .map(|(&m, s)| &caches[m].entries[s])
                    .collect();
                let mut node = Vec::new();
                for ja in 0..codec.len() {
                    let actions = codec.decode(ja);
                    if !per_member
                        .iter()
                        .zip(&actions)
                        .all(|(e, &a)| e.available[a])
                    {
                        continue;
                    }
                    let marginals: Vec<&[(StateId, f64)]> = per_member
                        .iter()
                        .zip(&actions)
                        .map(|(e, &a)| e.successors[a].as_slice())
                        .collect();
                    let succ = product(&marginals);
                    for (t, _) in &succ {
                        next.entry(t.clone()).or_insert(0);
                    }
                    node.push((ja, succ));
                }
                raw.push(node);
            }
            let next_states: Vec<Vec<StateId>> = next.keys().cloned().collect();
            for (idx, v) in next.values_mut().enumerate() {
                *v = idx;
            }

            layer.edges = layer
                .states
                .iter()
                .zip(raw)
                .map(|(joint, node)| {
                    node.into_iter()
                        .map(|(ja, succ)| {
                            let utility = point
                                .members
                                .iter()
                                .enumerate()
                                .filter(|(pos, _)| {
                                    point.utility_owner.get(*pos).copied().unwrap_or(false)
                                })
                                .map(|(pos, &m)| {
                                    instance.agents[m].utility(joint[pos], codec.component(ja, pos))
                                })
                                .sum();
                            let mut successors: Vec<(usize, f64)> =
                                succ.into_iter().map(|(t, p)| (next[&t], p)).collect();
                            successors.sort_by_key(|&(t, _)| t);
                            ActionEdge {
                                joint_action: ja,
                                utility,
                                successors,
                            }
                        })
                        .collect()
                })
                .collect();
            layers.push(layer);
            current = next_states;
        }

        interactions.push(InteractionLayers {
            members: point.members.clone(),
            codec,
            layers,
        });
    }

    LayeredSpace {
        interactions,
        horizon: h,
        num_criteria: n_criteria,
    }
}

#[derive(Debug)]
struct AgentEntry {
    available: Vec<bool>,
    /// Per action, merged positive-probability successors.
    successors: Vec<Vec<(StateId, f64)>>,
}

#[derive(Debug, Default)]
struct AgentCache {
    entries: BTreeMap<StateId, AgentEntry>,
}

impl AgentCache {
    fn ensure(&mut self, agent: &dyn crate::model::AgentModel, s: StateId) {
        self.entries.entry(s).or_insert_with(|| {
            let n = agent.num_actions();
            let mut available = Vec::with_capacity(n);
            let mut successors = Vec::with_capacity(n);
            let mut buf = Vec::new();
            for a in 0..n {
                let ok = agent.action_available(s, a);
                available.push(ok);
                let mut merged: BTreeMap<StateId, f64> = BTreeMap::new();
                if ok {
                    buf.clear();
                    agent.transition(s, a, &mut buf);
                    for &(t, p) in &buf {
                        if p > 0.0 {
                            *merged.entry(t).or_insert(0.0) += p;
                        }
                    }
                }
                successors.push(merged.into_iter().collect());
            }
            AgentEntry {
                available,
                successors,
            }
        });
    }
}

fn product(marginals: &[&[(StateId, f64)]]) -> Vec<(Vec<StateId>, f64)> {
    let mut out: Vec<(Vec<StateId>, f64)> = vec![(Vec::with_capacity(marginals.len()), 1.0)];
    for marginal in marginals {
        let mut next = Vec::with_capacity(out.len() * marginal.len());
        for (prefix, p) in &out {
            for &(s, q) in marginal.iter() {
                let mut t = prefix.clone();
                t.push(s);
                next.push((t, p * q));
            }
        }
        out = next;
    }
    out
}
