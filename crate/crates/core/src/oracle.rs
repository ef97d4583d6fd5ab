//! Reference planners: exhaustive search over deterministic policies, value
//! iteration for risk-free problems, and a first-come-first-serve baseline.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::layers::LayeredSpace;
use crate::model::{ActionId, MccSspInstance, StateId};
use crate::risk::{edge_risk_coefficient, execution_risk, expected_utility, Policy, RiskError};

/// Default bound on the number of enumerated policies.
pub const DEFAULT_POLICY_CAP: u64 = 10_000_000;

/// Tolerance when comparing a policy's risk with its budget.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("more than {0} deterministic policies to enumerate")]
    CapExceeded(u64),
    #[error("dynamic programming check needs agents that belong to a single interaction point")]
    SharedAgents,
    #[error("agent {0} has no `wait` action")]
    MissingWait(usize),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForceResult {
    /// `None` when no policy satisfies every budget.
    pub policy: Option<Policy>,
    pub objective: f64,
    pub risks: Vec<f64>,
    /// Number of policies evaluated.
    pub evaluated: u64,
}

impl BruteForceResult {
    pub fn is_feasible(&self) -> bool {
        self.policy.is_some()
    }
}

/// One decision made while enumerating a step.
#[derive(Clone, Debug)]
enum Unit {
    /// Action of a shared agent in one of its own states.
    Shared {
        agent: usize,
        state: StateId,
        options: Vec<ActionId>,
    },
    /// Actions of the non-shared members at one node.
    Local {
        i: usize,
        s: usize,
        options: Vec<Vec<ActionId>>,
    },
}

struct Search<'a> {
    instance: &'a MccSspInstance,
    space: &'a LayeredSpace,
    shared: Vec<bool>,
    /// `choice[i][k][s]`: joint action assigned at reachable nodes.
    choice: Vec<Vec<Vec<Option<usize>>>>,
    cap: u64,
    leaves: u64,
    evaluate: bool,
    best: Option<(f64, Vec<f64>, Policy)>,
}

impl<'a> Search<'a> {
    fn new(
        instance: &'a MccSspInstance,
        space: &'a LayeredSpace,
        cap: u64,
        evaluate: bool,
    ) -> Self {
        let choice = space
            .interactions
            .iter()
            .map(|il| {
                il.layers[..space.horizon]
                    .iter()
                    .map(|l| vec![None; l.len()])
                    .collect()
            })
            .collect();
        Search {
            instance,
            space,
            shared: instance.shared_agents(),
            choice,
            cap,
            leaves: 0,
            evaluate,
            best: None,
        }
    }

    fn available(&self, agent: usize, state: StateId) -> Vec<ActionId> {
        let model = &self.instance.agents[agent];
        (0..model.num_actions())
            .filter(|&a| model.action_available(state, a))
            .collect()
    }

    fn units(&self, k: usize, reach: &[Vec<bool>]) -> Vec<Unit> {
        let mut shared_slots: BTreeMap<(usize, StateId), ()> = BTreeMap::new();
        let mut locals = Vec::new();
        for (i, il) in self.space.interactions.iter().enumerate() {
            for (s, joint) in il.layers[k].states.iter().enumerate() {
                if !reach[i][s] {
                    continue;
                }
                let mut options: Vec<Vec<ActionId>> = vec![Vec::new()];
                for (pos, &m) in il.members.iter().enumerate() {
                    if self.shared[m] {
                        shared_slots.insert((m, joint[pos]), ());
                    } else {
                        let avail = self.available(m, joint[pos]);
                        options = options
                            .into_iter()
                            .flat_map(|prefix| {
                                avail.iter().map(move |&a| {
                                    let mut p = prefix.clone();
                                    p.push(a);
                                    p
                                })
                            })
                            .collect();
                    }
                }
                locals.push(Unit::Local { i, s, options });
            }
        }
        let mut units: Vec<Unit> = shared_slots
            .keys()
            .map(|&(agent, state)| Unit::Shared {
                agent,
                state,
                options: self.available(agent, state),
            })
            .collect();
        units.extend(locals);
        units
    }

    fn step(&mut self, k: usize, reach: Vec<Vec<bool>>) -> Result<(), OracleError> {
        if k == self.space.horizon {
            return self.leaf();
        }
        let units = self.units(k, &reach);
        let mut shared_pick: BTreeMap<(usize, StateId), ActionId> = BTreeMap::new();
        let mut local_pick: Vec<usize> = vec![0; units.len()];
        self.enumerate(k, &units, 0, &mut shared_pick, &mut local_pick)
    }

    fn enumerate(
        &mut self,
        k: usize,
        units: &[Unit],
        u: usize,
        shared_pick: &mut BTreeMap<(usize, StateId), ActionId>,
        local_pick: &mut Vec<usize>,
    ) -> Result<(), OracleError> {
        if u == units.len() {
            return self.commit_step(k, units, shared_pick, local_pick);
        }
        match &units[u] {
            Unit::Shared {
                agent,
                state,
                options,
            } => {
                for &a in options {
                    shared_pick.insert((*agent, *state), a);
                    self.enumerate(k, units, u + 1, shared_pick, local_pick)?;
                }
            }
            Unit::Local { options, .. } => {
                for o in 0..options.len() {
                    local_pick[u] = o;
                    self.enumerate(k, units, u + 1, shared_pick, local_pick)?;
                }
            }
        }
        Ok(())
    }

    fn commit_step(
        &mut self,
        k: usize,
        units: &[Unit],
        shared_pick: &BTreeMap<(usize, StateId), ActionId>,
        local_pick: &[usize],
    ) -> Result<(), OracleError> {
        let space = self.space;
        let mut next: Vec<Vec<bool>> = space
            .interactions
            .iter()
            .map(|il| vec![false; il.layers[k + 1].len()])
            .collect();
        for (u, unit) in units.iter().enumerate() {
            let Unit::Local { i, s, options } = unit else {
                continue;
            };
            let il = &space.interactions[*i];
            let joint = &il.layers[k].states[*s];
            let mut local = options[local_pick[u]].iter();
            let actions: Vec<ActionId> = il
                .members
                .iter()
                .enumerate()
                .map(|(pos, &m)| {
                    if self.shared[m] {
                        shared_pick[&(m, joint[pos])]
                    } else {
                        *local.next().expect("local option arity")
                    }
                })
                .collect();
            let ja = il.codec.encode(&actions);
            self.choice[*i][k][*s] = Some(ja);
            let edge = il.layers[k].edges[*s]
                .iter()
                .find(|e| e.joint_action == ja)
                .expect("available joint action has an edge");
            for &(t, q) in &edge.successors {
                if q > 0.0 {
                    next[*i][t] = true;
                }
            }
        }
        let result = self.step(k + 1, next);
        for unit in units {
            if let Unit::Local { i, s, .. } = unit {
                self.choice[*i][k][*s] = None;
            }
        }
        result
    }

    fn leaf(&mut self) -> Result<(), OracleError> {
        self.leaves += 1;
        if self.leaves > self.cap {
            return Err(OracleError::CapExceeded(self.cap));
        }
        if !self.evaluate {
            return Ok(());
        }
        let space = self.space;
        let choice = &self.choice;
        let policy = Policy::deterministic(space, |i, k, s| {
            choice[i][k][s].unwrap_or(space.interactions[i].layers[k].edges[s][0].joint_action)
        });
        let mut risks = Vec::with_capacity(space.num_criteria);
        for j in 0..space.num_criteria {
            let r = execution_risk(space, &policy, j)?;
            if r > self.instance.risk_budgets[j] + FEASIBILITY_TOL {
                return Ok(());
            }
            risks.push(r);
        }
        let value = expected_utility(space, &policy)?;
        let better = match &self.best {
            None => true,
            Some((b, _, _)) => value > *b + 1e-12,
        };
        if better {
            self.best = Some((value, risks, policy));
        }
        Ok(())
    }
}

fn initial_reach(space: &LayeredSpace) -> Vec<Vec<bool>> {
    space.interactions.iter().map(|_| vec![true]).collect()
}

/// Exhaustive search over deterministic non-stationary policies restricted to
/// the nodes each candidate actually reaches. Agents shared by several
/// interaction points choose one action per step and own state. Among
/// equally good policies the first one in enumeration order wins.
pub fn brute_force_optimal(
    instance: &MccSspInstance,
    space: &LayeredSpace,
    cap: u64,
) -> Result<BruteForceResult, OracleError> {
    let mut search = Search::new(instance, space, cap, true);
    search.step(0, initial_reach(space))?;
    let evaluated = search.leaves;
    Ok(match search.best {
        Some((objective, risks, policy)) => BruteForceResult {
            policy: Some(policy),
            objective,
            risks,
            evaluated,
        },
        None => BruteForceResult {
            policy: None,
            objective: 0.0,
            risks: Vec::new(),
            evaluated,
        },
    })
}

/// Number of distinct policies [`brute_force_optimal`] would evaluate, or
/// `None` if it exceeds `cap`.
pub fn count_policies(instance: &MccSspInstance, space: &LayeredSpace, cap: u64) -> Option<u64> {
    let mut search = Search::new(instance, space, cap, false);
    match search.step(0, initial_reach(space)) {
        Ok(()) => Some(search.leaves),
        Err(_) => None,
    }
}

/// Unconstrained optimum by backward value iteration on the layers. Only
/// valid when no agent is shared, since then interaction points decouple.
pub fn dp_optimum(instance: &MccSspInstance, space: &LayeredSpace) -> Result<f64, OracleError> {
    if instance.shared_agents().iter().any(|&s| s) {
        return Err(OracleError::SharedAgents);
    }
    let mut total = 0.0;
    for il in &space.interactions {
        let mut value = vec![0.0; il.layers[space.horizon].len()];
        for k in (0..space.horizon).rev() {
            value = il.layers[k]
                .edges
                .iter()
                .map(|edges| {
                    edges
                        .iter()
                        .map(|e| {
                            e.utility + e.successors.iter().map(|&(t, q)| q * value[t]).sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
        }
        total += value[0];
    }
    Ok(total)
}

/// Index of the action labelled `wait`, if any.
pub fn wait_action(instance: &MccSspInstance, agent: usize) -> Option<ActionId> {
    let model = &instance.agents[agent];
    (0..model.num_actions()).find(|&a| model.action_label(a) == "wait")
}

/// First-come-first-serve planning at the first step.
///
/// Agents in `arrival_order` are processed in turn. Each gets its
/// highest-utility available action whose one-step risk, summed over the
/// interaction points containing it, stays within `delta` for every
/// criterion given the actions already granted (members not yet processed
/// are assumed to wait); otherwise it waits. Equal utilities prefer the lower action index.
/// Agents outside `arrival_order` keep their lowest available action. Later
/// steps use the lowest available joint action.
pub fn fcfs_plan(
    instance: &MccSspInstance,
    space: &LayeredSpace,
    arrival_order: &[usize],
    delta: f64,
) -> Result<Policy, OracleError> {
    let n = instance.agents.len();
    let mut assigned: Vec<ActionId> = Vec::with_capacity(n);
    for v in 0..n {
        let model = &instance.agents[v];
        let s0 = model.initial_state();
        let a = match wait_action(instance, v) {
            Some(w) if model.action_available(s0, w) => w,
            _ => (0..model.num_actions())
                .find(|&a| model.action_available(s0, a))
                .unwrap_or(0),
        };
        assigned.push(a);
    }
    for &v in arrival_order {
        if wait_action(instance, v).is_none() {
            return Err(OracleError::MissingWait(v));
        }
    }

    let node_risk = |assigned: &[ActionId], i: usize, j: usize| -> f64 {
        let il = &space.interactions[i];
        let actions: Vec<ActionId> = il.members.iter().map(|&m| assigned[m]).collect();
        let ja = il.codec.encode(&actions);
        match il.layers[0].edges[0]
            .iter()
            .position(|e| e.joint_action == ja)
        {
            Some(e) => edge_risk_coefficient(space, i, 0, 0, e, j),
            None => f64::INFINITY,
        }
    };

    for &v in arrival_order {
        let model = &instance.agents[v];
        let s0 = model.initial_state();
        let wait = wait_action(instance, v).expect("checked above");
        let mut candidates: Vec<ActionId> = (0..model.num_actions())
            .filter(|&a| a != wait && model.action_available(s0, a))
            .collect();
        candidates.sort_by(|&a, &b| {
            model
                .utility(s0, b)
                .partial_cmp(&model.utility(s0, a))
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let points = instance.interactions_of(v);
        for a in candidates {
            assigned[v] = a;
            let within = (0..space.num_criteria).all(|j| {
                points
                    .iter()
                    .map(|&i| node_risk(&assigned, i, j))
                    .sum::<f64>()
                    <= delta
            });
            if within {
                break;
            }
            assigned[v] = wait;
        }
    }

    Ok(Policy::deterministic(space, |i, k, s| {
        let il = &space.interactions[i];
        if k == 0 {
            let ja = il
                .codec
                .encode(&il.members.iter().map(|&m| assigned[m]).collect::<Vec<_>>());
            if il.layers[0].edges[0].iter().any(|e| e.joint_action == ja) {
                return ja;
            }
        }
        il.layers[k].edges[s][0].joint_action
    }))
}
