//! Execution risk and expected utility of policies over a [`LayeredSpace`].
//!
//! Execution risk is evaluated with the backward recursion
//! `Er(s_k) = r~(s_k) + sum_a pi(s_k, a) sum_s' T~(s_k, a, s') Er(s')` with
//! `Er(s_h) = r~(s_h)`, where `T~ = T (1 - r~(s_k))`. This is deliberately a
//! different computation from the linear form used inside the integer
//! program, so the two can check each other.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::layers::LayeredSpace;
use crate::model::RiskCoupling;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RiskError {
    #[error("probability {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("policy has no action for interaction {interaction}, step {step}, state {state}")]
    MissingAssignment {
        interaction: usize,
        step: usize,
        state: usize,
    },
    #[error("policy picks unavailable joint action {action} for interaction {interaction}, step {step}, state {state}")]
    UnavailableAction {
        interaction: usize,
        step: usize,
        state: usize,
        action: usize,
    },
    #[error("policy shape does not match the layered space")]
    ShapeMismatch,
    #[error("unknown risk criterion {0}")]
    UnknownCriterion(usize),
}

fn check_prob(p: f64) -> Result<f64, RiskError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(RiskError::OutOfRange(p))
    }
}

/// Aggregate failure probability `1 - prod(1 - r_p)` of pairwise risks.
pub fn state_risk_tilde(pairwise: &[f64]) -> Result<f64, RiskError> {
    let mut survive = 1.0;
    for &r in pairwise {
        survive *= 1.0 - check_prob(r)?;
    }
    Ok(1.0 - survive)
}

/// Transition probability conditioned on surviving the current state.
pub fn transition_tilde(t: f64, state_risk: f64) -> Result<f64, RiskError> {
    Ok(check_prob(t)? * (1.0 - check_prob(state_risk)?))
}

/// Non-stationary, possibly stochastic policy over a layered space.
///
/// `choices[i][k][s]` lists `(joint action, probability)` pairs for state `s`
/// of layer `k < h` of interaction point `i`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub choices: Vec<Vec<Vec<Vec<(usize, f64)>>>>,
}

impl Policy {
    /// Deterministic policy from `select(i, k, s)` returning a joint action.
    pub fn deterministic(
        space: &LayeredSpace,
        mut select: impl FnMut(usize, usize, usize) -> usize,
    ) -> Self {
        let choices = space
            .interactions
            .iter()
            .enumerate()
            .map(|(i, il)| {
                il.layers[..space.horizon]
                    .iter()
                    .enumerate()
                    .map(|(k, layer)| {
                        (0..layer.len())
                            .map(|s| vec![(select(i, k, s), 1.0)])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Policy { choices }
    }

    /// The joint action with the largest probability at `(i, k, s)`.
    pub fn action(&self, i: usize, k: usize, s: usize) -> Option<usize> {
        self.choices
            .get(i)?
            .get(k)?
            .get(s)?
            .iter()
            .copied()
            .fold(None, |best: Option<(usize, f64)>, (a, p)| match best {
                Some((_, q)) if q >= p => best,
                _ => Some((a, p)),
            })
            .map(|(a, _)| a)
    }
}

/// Resolves the policy at a node into `(edge index, probability)` pairs.
fn node_edges(
    space: &LayeredSpace,
    policy: &Policy,
    i: usize,
    k: usize,
    s: usize,
) -> Result<Vec<(usize, f64)>, RiskError> {
    let choice = policy
        .choices
        .get(i)
        .and_then(|c| c.get(k))
        .and_then(|c| c.get(s))
        .ok_or(RiskError::MissingAssignment {
            interaction: i,
            step: k,
            state: s,
        })?;
    if choice.is_empty() {
        return Err(RiskError::MissingAssignment {
            interaction: i,
            step: k,
            state: s,
        });
    }
    let edges = &space.interactions[i].layers[k].edges[s];
    choice
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|&(a, p)| {
            edges
                .binary_search_by_key(&a, |e| e.joint_action)
                .map(|e| (e, p))
                .map_err(|_| RiskError::UnavailableAction {
                    interaction: i,
                    step: k,
                    state: s,
                    action: a,
                })
        })
        .collect()
}

fn check_shape(space: &LayeredSpace, policy: &Policy) -> Result<(), RiskError> {
    if policy.choices.len() != space.interactions.len() {
        return Err(RiskError::ShapeMismatch);
    }
    for (c, il) in policy.choices.iter().zip(&space.interactions) {
        if c.len() != space.horizon
            || c.iter()
                .zip(&il.layers)
                .any(|(ck, layer)| ck.len() != layer.len())
        {
            return Err(RiskError::ShapeMismatch);
        }
    }
    Ok(())
}

/// Execution risk of each interaction point under criterion `j`, by backward
/// recursion over the layers.
pub fn interaction_execution_risks(
    space: &LayeredSpace,
    policy: &Policy,
    j: usize,
) -> Result<Vec<f64>, RiskError> {
    if j >= space.num_criteria {
        return Err(RiskError::UnknownCriterion(j));
    }
    check_shape(space, policy)?;
    let h = space.horizon;
    let mut out = Vec::with_capacity(space.interactions.len());
    for (i, il) in space.interactions.iter().enumerate() {
        let mut er: Vec<f64> = il.layers[h].risk[j].clone();
        for k in (0..h).rev() {
            let layer = &il.layers[k];
            let mut cur = vec![0.0; layer.len()];
            for (s, value) in cur.iter_mut().enumerate() {
                let r = layer.risk[j][s];
                let mut future = 0.0;
                for (e, p) in node_edges(space, policy, i, k, s)? {
                    for &(t, q) in &layer.edges[s][e].successors {
                        future += p * transition_tilde(q, r)? * er[t];
                    }
                }
                *value = r + future;
            }
            er = cur;
        }
        out.push(er[0]);
    }
    Ok(out)
}

/// Global execution risk under criterion `j`: the sum over interaction
/// points. Under [`RiskCoupling::UnionBound`] this is an upper bound on the
/// true failure probability rather than its exact value.
pub fn execution_risk(space: &LayeredSpace, policy: &Policy, j: usize) -> Result<f64, RiskError> {
    Ok(interaction_execution_risks(space, policy, j)?.iter().sum())
}

/// Describes how [`execution_risk`] relates to the true failure probability.
pub fn risk_semantics(coupling: RiskCoupling) -> &'static str {
    match coupling {
        RiskCoupling::Exclusive => "exact",
        RiskCoupling::UnionBound => "upper bound",
    }
}

/// Occupancy flows `x[i][k][s][edge]` of a policy. With `criterion = None`
/// the flows follow `T`; with `Some(j)` they follow `T~` for criterion `j`,
/// i.e. they only carry probability mass that has not failed yet.
pub fn occupancy_flows(
    space: &LayeredSpace,
    policy: &Policy,
    criterion: Option<usize>,
) -> Result<Vec<Vec<Vec<Vec<f64>>>>, RiskError> {
    if let Some(j) = criterion {
        if j >= space.num_criteria {
            return Err(RiskError::UnknownCriterion(j));
        }
    }
    check_shape(space, policy)?;
    let h = space.horizon;
    let mut all = Vec::with_capacity(space.interactions.len());
    for (i, il) in space.interactions.iter().enumerate() {
        let mut per_layer = Vec::with_capacity(h);
        let mut occ = vec![1.0];
        for k in 0..h {
            let layer = &il.layers[k];
            let mut next = vec![0.0; il.layers[k + 1].len()];
            let mut flows = Vec::with_capacity(layer.len());
            for (s, &o) in occ.iter().enumerate() {
                let survive = match criterion {
                    Some(j) => 1.0 - layer.risk[j][s],
                    None => 1.0,
                };
                let mut node = vec![0.0; layer.edges[s].len()];
                if o > 0.0 {
                    for (e, p) in node_edges(space, policy, i, k, s)? {
                        let x = o * p;
                        node[e] += x;
                        for &(t, q) in &layer.edges[s][e].successors {
                            next[t] += x * q * survive;
                        }
                    }
                } else {
                    // Still validate the assignment.
                    node_edges(space, policy, i, k, s)?;
                }
                flows.push(node);
            }
            per_layer.push(flows);
            occ = next;
        }
        all.push(per_layer);
    }
    Ok(all)
}

/// Expected cumulative utility over steps `0..h`.
pub fn expected_utility(space: &LayeredSpace, policy: &Policy) -> Result<f64, RiskError> {
    let flows = occupancy_flows(space, policy, None)?;
    let mut total = 0.0;
    for (il, fi) in space.interactions.iter().zip(&flows) {
        for (layer, fk) in il.layers.iter().zip(fi) {
            for (edges, fs) in layer.edges.iter().zip(fk) {
                for (e, x) in edges.iter().zip(fs) {
                    total += x * e.utility;
                }
            }
        }
    }
    Ok(total)
}

/// Risk-row coefficient of a flow variable: the probability that taking the
/// edge from a surviving state leads to a failure at the successor.
pub fn edge_risk_coefficient(
    space: &LayeredSpace,
    i: usize,
    k: usize,
    s: usize,
    e: usize,
    j: usize,
) -> f64 {
    let il = &space.interactions[i];
    let survive = 1.0 - il.layers[k].risk[j][s];
    il.layers[k].edges[s][e]
        .successors
        .iter()
        .map(|&(t, q)| q * survive * il.layers[k + 1].risk[j][t])
        .sum()
}

/// The linear form of execution risk in terms of `T~` flows for criterion
/// `j`: `sum r~(s') x T~ + sum_i r~(s_0^i)`.
pub fn linear_risk_form(space: &LayeredSpace, flows_j: &[Vec<Vec<Vec<f64>>>], j: usize) -> f64 {
    let mut total = space.initial_risk(j);
    for (i, fi) in flows_j.iter().enumerate() {
        for (k, fk) in fi.iter().enumerate() {
            for (s, fs) in fk.iter().enumerate() {
                for (e, &x) in fs.iter().enumerate() {
                    if x != 0.0 {
                        total += x * edge_risk_coefficient(space, i, k, s, e, j);
                    }
                }
            }
        }
    }
    total
}
