//! Agents, interaction points and problem instances.
//!
//! Agents are finite MDPs that may be defined implicitly: the ambient state
//! space of an agent is never enumerated, only the states reachable from its
//! initial state within the horizon. Interaction points group a few agents
//! that share a failure model; the joint state of an interaction point is the
//! ordered tuple of member states.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Opaque state identifier of a single agent.
pub type StateId = u64;
/// Index of an action in an agent's action set.
pub type ActionId = usize;

/// Tolerance for probability distributions summing to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// A single agent's finite MDP.
pub trait AgentModel: Send + Sync + fmt::Debug {
    fn num_actions(&self) -> usize;

    fn initial_state(&self) -> StateId;

    /// Successor distribution of `(state, action)`, appended to `out`.
    fn transition(&self, state: StateId, action: ActionId, out: &mut Vec<(StateId, f64)>);

    /// Non-negative utility of taking `action` in `state`.
    fn utility(&self, state: StateId, action: ActionId) -> f64;

    /// Agents may disable actions in some states (e.g. a vehicle that is
    /// already executing a maneuver has nothing left to decide).
    fn action_available(&self, _state: StateId, _action: ActionId) -> bool {
        true
    }

    fn action_label(&self, action: ActionId) -> String {
        format!("a{action}")
    }

    fn state_label(&self, state: StateId) -> String {
        format!("{state}")
    }

    /// Explicit tabular representation, when the agent has one.
    fn as_tabular(&self) -> Option<&TabularMdp> {
        None
    }
}

/// An explicitly enumerated MDP, as read from instance files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    /// `transitions[state][action]` is a list of `(successor, probability)`.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// `utility[state][action]`.
    pub utility: Vec<Vec<f64>>,
    pub initial_state: usize,
}

impl TabularMdp {
    /// Rescales every distribution whose mass is within [`PROB_TOLERANCE`] of
    /// one so that it sums to one exactly. Rows further off are left alone
    /// and reported by [`validate_instance`].
    pub fn renormalize(&mut self) {
        for row in self.transitions.iter_mut().flatten() {
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            if total > 0.0 && (total - 1.0).abs() <= PROB_TOLERANCE {
                for (_, p) in row.iter_mut() {
                    *p /= total;
                }
            }
        }
    }

    /// Deterministic chain `0 -> 1 -> ... -> len-1 -> len-1` with a single
    /// action of the given utility.
    pub fn chain(len: usize, utility: f64) -> Self {
        let states = (0..len).map(|s| format!("s{s}")).collect();
        let transitions = (0..len)
            .map(|s| vec![vec![((s + 1).min(len - 1), 1.0)]])
            .collect();
        TabularMdp {
            states,
            actions: vec!["go".into()],
            transitions,
            utility: vec![vec![utility]; len],
            initial_state: 0,
        }
    }

    /// Materializes the part of `agent` reachable within `horizon` steps.
    /// State labels are the agent's own state labels.
    pub fn materialize(agent: &dyn AgentModel, horizon: usize) -> Self {
        Self::materialize_indexed(agent, horizon).0
    }

    /// Like [`TabularMdp::materialize`], also returning the table index of
    /// every original state.
    pub fn materialize_indexed(
        agent: &dyn AgentModel,
        horizon: usize,
    ) -> (Self, BTreeMap<StateId, usize>) {
        let mut index: BTreeMap<StateId, usize> = BTreeMap::new();
        let mut order: Vec<StateId> = Vec::new();
        let s0 = agent.initial_state();
        index.insert(s0, 0);
        order.push(s0);
        let mut frontier = vec![s0];
        let mut buf = Vec::new();
        for _ in 0..horizon {
            let mut next = Vec::new();
            for &s in &frontier {
                for a in 0..agent.num_actions() {
                    if !agent.action_available(s, a) {
                        continue;
                    }
                    buf.clear();
                    agent.transition(s, a, &mut buf);
                    for &(t, p) in &buf {
                        if p > 0.0 && !index.contains_key(&t) {
                            index.insert(t, order.len());
                            order.push(t);
                            next.push(t);
                        }
                    }
                }
            }
            frontier = next;
        }
        // States first reached at the horizon keep their outgoing edges only
        // where the successors are already known; others become self-loops.
        let mut transitions = Vec::with_capacity(order.len());
        let mut utility = Vec::with_capacity(order.len());
        for &s in &order {
            let mut rows = Vec::with_capacity(agent.num_actions());
            let mut utils = Vec::with_capacity(agent.num_actions());
            for a in 0..agent.num_actions() {
                buf.clear();
                agent.transition(s, a, &mut buf);
                let known = buf.iter().all(|(t, p)| *p == 0.0 || index.contains_key(t));
                let row = if known {
                    buf.iter()
                        .filter(|(_, p)| *p > 0.0)
                        .map(|(t, p)| (index[t], *p))
                        .collect()
                } else {
                    vec![(index[&s], 1.0)]
                };
                rows.push(row);
                utils.push(agent.utility(s, a));
            }
            transitions.push(rows);
            utility.push(utils);
        }
        let mdp = TabularMdp {
            states: order.iter().map(|&s| agent.state_label(s)).collect(),
            actions: (0..agent.num_actions())
                .map(|a| agent.action_label(a))
                .collect(),
            transitions,
            utility,
            initial_state: 0,
        };
        (mdp, index)
    }
}

impl AgentModel for TabularMdp {
    fn num_actions(&self) -> usize {
        self.actions.len()
    }

    fn initial_state(&self) -> StateId {
        self.initial_state as StateId
    }

    fn transition(&self, state: StateId, action: ActionId, out: &mut Vec<(StateId, f64)>) {
        if let Some(row) = self
            .transitions
            .get(state as usize)
            .and_then(|r| r.get(action))
        {
            out.extend(row.iter().map(|&(t, p)| (t as StateId, p)));
        }
    }

    fn utility(&self, state: StateId, action: ActionId) -> f64 {
        self.utility
            .get(state as usize)
            .and_then(|r| r.get(action))
            .copied()
            .unwrap_or(0.0)
    }

    fn action_label(&self, action: ActionId) -> String {
        self.actions.get(action).cloned().unwrap_or_default()
    }

    fn state_label(&self, state: StateId) -> String {
        self.states.get(state as usize).cloned().unwrap_or_default()
    }

    fn as_tabular(&self) -> Option<&TabularMdp> {
        Some(self)
    }
}

/// Failure probability of a joint member state under one risk criterion.
pub trait RiskModel: Send + Sync + fmt::Debug {
    /// Aggregate failure probability of the joint state, i.e. one minus the
    /// product of the pairwise survival probabilities.
    fn state_risk(&self, joint: &[StateId]) -> f64;

    /// Explicitly stored values, for validation. `None` for implicit models.
    fn stored_values(&self) -> Option<Vec<f64>> {
        None
    }
}

/// A risk model that never fails.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoRisk;

impl RiskModel for NoRisk {
    fn state_risk(&self, _joint: &[StateId]) -> f64 {
        0.0
    }

    fn stored_values(&self) -> Option<Vec<f64>> {
        Some(Vec::new())
    }
}

/// Aggregate risk stored per joint state; missing joint states are safe.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointRiskTable {
    pub entries: BTreeMap<Vec<StateId>, f64>,
}

impl RiskModel for JointRiskTable {
    fn state_risk(&self, joint: &[StateId]) -> f64 {
        self.entries.get(joint).copied().unwrap_or(0.0)
    }

    fn stored_values(&self) -> Option<Vec<f64>> {
        Some(self.entries.values().copied().collect())
    }
}

/// Pairwise risk between members at positions `(a, b)` of the interaction.
/// The aggregate is `1 - prod(1 - r)` over all listed pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRiskTable {
    pub pairs: Vec<((usize, usize), BTreeMap<(StateId, StateId), f64>)>,
}

impl RiskModel for PairwiseRiskTable {
    fn state_risk(&self, joint: &[StateId]) -> f64 {
        let mut survive = 1.0;
        for ((a, b), table) in &self.pairs {
            if let (Some(&sa), Some(&sb)) = (joint.get(*a), joint.get(*b)) {
                survive *= 1.0 - table.get(&(sa, sb)).copied().unwrap_or(0.0);
            }
        }
        1.0 - survive
    }

    fn stored_values(&self) -> Option<Vec<f64>> {
        Some(
            self.pairs
                .iter()
                .flat_map(|(_, t)| t.values().copied())
                .collect(),
        )
    }
}

/// Risk given by a closure over the joint state.
pub struct FnRisk<F>(pub F);

impl<F> fmt::Debug for FnRisk<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnRisk")
    }
}

impl<F> RiskModel for FnRisk<F>
where
    F: Fn(&[StateId]) -> f64 + Send + Sync,
{
    fn state_risk(&self, joint: &[StateId]) -> f64 {
        (self.0)(joint)
    }
}

/// A group of agents that coordinate and may fail jointly.
#[derive(Clone, Debug)]
pub struct InteractionPoint {
    /// Agent indices, in the order used for joint states and joint actions.
    pub members: Vec<usize>,
    /// Whether this interaction point counts the utility of each member.
    pub utility_owner: Vec<bool>,
    /// One risk model per risk criterion.
    pub risks: Vec<Arc<dyn RiskModel>>,
}

impl InteractionPoint {
    pub fn new(members: Vec<usize>, risks: Vec<Arc<dyn RiskModel>>) -> Self {
        let utility_owner = vec![false; members.len()];
        InteractionPoint {
            members,
            utility_owner,
            risks,
        }
    }

    pub fn position(&self, agent: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == agent)
    }
}

/// How per-interaction execution risks combine into the global one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskCoupling {
    /// Every pair of agents can fail at no more than one interaction point,
    /// so the sum over interaction points is exact.
    #[default]
    Exclusive,
    /// No exclusivity is assumed; the sum is an upper bound.
    UnionBound,
}

/// A complete problem instance.
#[derive(Clone, Debug)]
pub struct MccSspInstance {
    pub agent_names: Vec<String>,
    pub agents: Vec<Arc<dyn AgentModel>>,
    pub interactions: Vec<InteractionPoint>,
    pub horizon: usize,
    /// One budget per risk criterion.
    pub risk_budgets: Vec<f64>,
    pub coupling: RiskCoupling,
    /// Whether failures in the states reached at the horizon count.
    pub include_terminal_risk: bool,
}

impl MccSspInstance {
    pub fn new(horizon: usize, risk_budgets: Vec<f64>) -> Self {
        MccSspInstance {
            agent_names: Vec::new(),
            agents: Vec::new(),
            interactions: Vec::new(),
            horizon,
            risk_budgets,
            coupling: RiskCoupling::Exclusive,
            include_terminal_risk: true,
        }
    }

    pub fn num_criteria(&self) -> usize {
        self.risk_budgets.len()
    }

    pub fn add_agent(&mut self, name: impl Into<String>, model: Arc<dyn AgentModel>) -> usize {
        self.agent_names.push(name.into());
        self.agents.push(model);
        self.agents.len() - 1
    }

    pub fn add_interaction(&mut self, point: InteractionPoint) -> usize {
        self.interactions.push(point);
        self.interactions.len() - 1
    }

    /// Interaction points containing `agent`, in increasing id order.
    pub fn interactions_of(&self, agent: usize) -> Vec<usize> {
        self.interactions
            .iter()
            .enumerate()
            .filter(|(_, p)| p.members.contains(&agent))
            .map(|(i, _)| i)
            .collect()
    }

    /// Counts each agent's utility at the lowest-numbered interaction point
    /// that contains it, clearing any previous assignment.
    pub fn assign_default_utility_owners(&mut self) {
        let mut owned = vec![false; self.agents.len()];
        for point in &mut self.interactions {
            for (pos, &m) in point.members.iter().enumerate() {
                let first = m < owned.len() && !owned[m];
                point.utility_owner[pos] = first;
                if first {
                    owned[m] = true;
                }
            }
        }
    }

    /// Moves the utility ownership of `agent` to `interaction`.
    pub fn set_utility_owner(
        &mut self,
        agent: usize,
        interaction: usize,
    ) -> Result<(), ModelError> {
        let pos = self
            .interactions
            .get(interaction)
            .ok_or(ModelError::UnknownInteraction(interaction))?
            .position(agent)
            .ok_or(ModelError::NotAMember { agent, interaction })?;
        for point in &mut self.interactions {
            if let Some(p) = point.position(agent) {
                point.utility_owner[p] = false;
            }
        }
        self.interactions[interaction].utility_owner[pos] = true;
        Ok(())
    }

    /// The interaction point that counts the utility of `agent`.
    pub fn utility_owner_of(&self, agent: usize) -> Option<usize> {
        self.interactions.iter().position(|p| {
            p.position(agent)
                .map(|pos| p.utility_owner[pos])
                .unwrap_or(false)
        })
    }

    /// Agents appearing in at least two interaction points.
    pub fn shared_agents(&self) -> Vec<bool> {
        let mut count = vec![0usize; self.agents.len()];
        for p in &self.interactions {
            for &m in &p.members {
                if m < count.len() {
                    count[m] += 1;
                }
            }
        }
        count.into_iter().map(|c| c >= 2).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown interaction point {0}")]
    UnknownInteraction(usize),
    #[error("agent {agent} is not a member of interaction point {interaction}")]
    NotAMember { agent: usize, interaction: usize },
}

/// One broken invariant found by [`validate_instance`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    BadHorizon,
    BudgetOutOfRange {
        criterion: usize,
        value: f64,
    },
    UnknownInitialState {
        agent: usize,
    },
    NoAvailableAction {
        agent: usize,
        state: StateId,
    },
    DistributionNotNormalized {
        agent: usize,
        state: StateId,
        action: ActionId,
        sum: f64,
    },
    ProbabilityOutOfRange {
        agent: usize,
        state: StateId,
        action: ActionId,
        value: f64,
    },
    InvalidUtility {
        agent: usize,
        state: StateId,
        action: ActionId,
        value: f64,
    },
    EmptyInteraction {
        interaction: usize,
    },
    UnknownMember {
        interaction: usize,
        agent: usize,
    },
    DuplicateMember {
        interaction: usize,
        agent: usize,
    },
    OwnerFlagArity {
        interaction: usize,
    },
    RiskArity {
        interaction: usize,
        found: usize,
        expected: usize,
    },
    RiskOutOfRange {
        interaction: usize,
        criterion: usize,
        value: f64,
    },
    AgentNotCovered {
        agent: usize,
    },
    UtilityOwnerCount {
        agent: usize,
        count: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            BadHorizon => write!(f, "horizon must be at least 1"),
            BudgetOutOfRange { criterion, value } => {
                write!(f, "risk budget {criterion} is {value}, outside [0,1]")
            }
            UnknownInitialState { agent } => {
                write!(f, "agent {agent}: initial state is not one of its states")
            }
            NoAvailableAction { agent, state } => {
                write!(f, "agent {agent}: state {state} has no available action")
            }
            DistributionNotNormalized { agent, state, action, sum } => write!(
                f,
                "agent {agent}: distribution not normalized for (state {state}, action {action}): sums to {sum}"
            ),
            ProbabilityOutOfRange { agent, state, action, value } => write!(
                f,
                "agent {agent}: probability {value} outside [0,1] for (state {state}, action {action})"
            ),
            InvalidUtility { agent, state, action, value } => write!(
                f,
                "agent {agent}: utility {value} is negative or not finite for (state {state}, action {action})"
            ),
            EmptyInteraction { interaction } => {
                write!(f, "interaction point {interaction} has no members")
            }
            UnknownMember { interaction, agent } => {
                write!(f, "interaction point {interaction} refers to unknown agent {agent}")
            }
            DuplicateMember { interaction, agent } => {
                write!(f, "interaction point {interaction} lists agent {agent} twice")
            }
            OwnerFlagArity { interaction } => write!(
                f,
                "interaction point {interaction}: utility owner flags do not match its members"
            ),
            RiskArity { interaction, found, expected } => write!(
                f,
                "interaction point {interaction} has {found} risk models, expected {expected}"
            ),
            RiskOutOfRange { interaction, criterion, value } => write!(
                f,
                "interaction point {interaction}: risk {value} outside [0,1] for criterion {criterion}"
            ),
            AgentNotCovered { agent } => {
                write!(f, "coverage violation: agent {agent} belongs to no interaction point")
            }
            UtilityOwnerCount { agent, count } => write!(
                f,
                "agent {agent}: utility counted at {count} interaction points, expected exactly one"
            ),
        }
    }
}

/// Result of [`validate_instance`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| format!("{v}")).collect()
    }
}

fn check_row(
    agent_idx: usize,
    agent: &dyn AgentModel,
    s: StateId,
    a: ActionId,
    buf: &mut Vec<(StateId, f64)>,
    out: &mut Vec<Violation>,
) {
    buf.clear();
    agent.transition(s, a, buf);
    let mut sum = 0.0;
    for &(_, p) in buf.iter() {
        if !(0.0..=1.0).contains(&p) {
            out.push(Violation::ProbabilityOutOfRange {
                agent: agent_idx,
                state: s,
                action: a,
                value: p,
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        out.push(Violation::DistributionNotNormalized {
            agent: agent_idx,
            state: s,
            action: a,
            sum,
        });
    }
    let u = agent.utility(s, a);
    if !(u >= 0.0 && u.is_finite()) {
        out.push(Violation::InvalidUtility {
            agent: agent_idx,
            state: s,
            action: a,
            value: u,
        });
    }
}

/// Per-agent sets of states reachable at each time step `0..=horizon`.
pub(crate) fn agent_reachable_sets(
    agent: &dyn AgentModel,
    horizon: usize,
) -> Vec<BTreeSet<StateId>> {
    let mut layers = Vec::with_capacity(horizon + 1);
    let mut current = BTreeSet::new();
    current.insert(agent.initial_state());
    let mut buf = Vec::new();
    for _ in 0..horizon {
        let mut next = BTreeSet::new();
        for &s in &current {
            for a in 0..agent.num_actions() {
                if !agent.action_available(s, a) {
                    continue;
                }
                buf.clear();
                agent.transition(s, a, &mut buf);
                next.extend(buf.iter().filter(|(_, p)| *p > 0.0).map(|(t, _)| *t));
            }
        }
        layers.push(core::mem::replace(&mut current, next));
    }
    layers.push(current);
    layers
}

/// Checks every structural invariant of an instance. Implicit agents are
/// checked on the states reachable within the horizon; tabular agents on all
/// of their states.
pub fn validate_instance(instance: &MccSspInstance) -> ValidationReport {
    let mut out = Vec::new();
    if instance.horizon < 1 {
        out.push(Violation::BadHorizon);
    }
    for (j, &b) in instance.risk_budgets.iter().enumerate() {
        if !(0.0..=1.0).contains(&b) {
            out.push(Violation::BudgetOutOfRange {
                criterion: j,
                value: b,
            });
        }
    }

    let mut buf = Vec::new();
    let mut reachable: Vec<Vec<BTreeSet<StateId>>> = Vec::with_capacity(instance.agents.len());
    for (v, agent) in instance.agents.iter().enumerate() {
        let agent = agent.as_ref();
        if let Some(tab) = agent.as_tabular() {
            if tab.initial_state >= tab.states.len() {
                out.push(Violation::UnknownInitialState { agent: v });
                reachable.push(Vec::new());
                continue;
            }
            for s in 0..tab.states.len() as StateId {
                for a in 0..tab.actions.len() {
                    check_row(v, agent, s, a, &mut buf, &mut out);
                }
            }
        }
        let sets = agent_reachable_sets(agent, instance.horizon);
        for set in sets.iter().take(instance.horizon) {
            for &s in set {
                let mut any = false;
                for a in 0..agent.num_actions() {
                    if agent.action_available(s, a) {
                        any = true;
                        if agent.as_tabular().is_none() {
                            check_row(v, agent, s, a, &mut buf, &mut out);
                        }
                    }
                }
                if !any {
                    out.push(Violation::NoAvailableAction { agent: v, state: s });
                }
            }
        }
        reachable.push(sets);
    }

    let n_agents = instance.agents.len();
    let mut covered = vec![false; n_agents];
    let mut owners = vec![0usize; n_agents];
    for (i, point) in instance.interactions.iter().enumerate() {
        if point.members.is_empty() {
            out.push(Violation::EmptyInteraction { interaction: i });
        }
        let mut seen = BTreeSet::new();
        let mut members_ok = true;
        for &m in &point.members {
            if m >= n_agents {
                out.push(Violation::UnknownMember {
                    interaction: i,
                    agent: m,
                });
                members_ok = false;
                continue;
            }
            if !seen.insert(m) {
                out.push(Violation::DuplicateMember {
                    interaction: i,
                    agent: m,
                });
            }
            covered[m] = true;
        }
        if point.utility_owner.len() != point.members.len() {
            out.push(Violation::OwnerFlagArity { interaction: i });
        } else {
            for (pos, &m) in point.members.iter().enumerate() {
                if m < n_agents && point.utility_owner[pos] {
                    owners[m] += 1;
                }
            }
        }
        if point.risks.len() != instance.num_criteria() {
            out.push(Violation::RiskArity {
                interaction: i,
                found: point.risks.len(),
                expected: instance.num_criteria(),
            });
        }
        for (j, risk) in point.risks.iter().enumerate() {
            let mut report = |value: f64| {
                if !(0.0..=1.0).contains(&value) {
                    out.push(Violation::RiskOutOfRange {
                        interaction: i,
                        criterion: j,
                        value,
                    });
                    true
                } else {
                    false
                }
            };
            if let Some(values) = risk.stored_values() {
                for v in values {
                    if report(v) {
                        break;
                    }
                }
            } else if members_ok && !point.members.is_empty() {
                'layers: for k in 0..=instance.horizon {
                    let sets: Vec<Vec<StateId>> = point
                        .members
                        .iter()
                        .map(|&m| {
                            reachable[m]
                                .get(k)
                                .map(|s| s.iter().copied().collect())
                                .unwrap_or_default()
                        })
                        .collect();
                    let mut found = false;
                    for_each_product(&sets, 100_000, |joint| {
                        if !found && report(risk.state_risk(joint)) {
                            found = true;
                        }
                    });
                    if found {
                        break 'layers;
                    }
                }
            }
        }
    }
    for v in 0..n_agents {
        if !covered[v] {
            out.push(Violation::AgentNotCovered { agent: v });
        } else if owners[v] != 1 {
            out.push(Violation::UtilityOwnerCount {
                agent: v,
                count: owners[v],
            });
        }
    }
    ValidationReport { violations: out }
}

/// Calls `f` on every tuple of the Cartesian product, up to `limit` tuples.
fn for_each_product(sets: &[Vec<StateId>], limit: usize, mut f: impl FnMut(&[StateId])) {
    if sets.iter().any(|s| s.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; sets.len()];
    let mut tuple: Vec<StateId> = sets.iter().map(|s| s[0]).collect();
    for _ in 0..limit {
        f(&tuple);
        let mut pos = sets.len();
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < sets[pos].len() {
                tuple[pos] = sets[pos][idx[pos]];
                break;
            }
            idx[pos] = 0;
            tuple[pos] = sets[pos][0];
        }
    }
}

/// Mixed-radix encoding of joint actions: member 0 is the most significant
/// digit, so joint action ids sort lexicographically by member actions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointActionCodec {
    radices: Vec<usize>,
}

impl JointActionCodec {
    pub fn new(radices: Vec<usize>) -> Self {
        JointActionCodec { radices }
    }

    pub fn len(&self) -> usize {
        self.radices.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn decode(&self, mut joint: usize) -> Vec<ActionId> {
        let mut out = vec![0; self.radices.len()];
        for (pos, &r) in self.radices.iter().enumerate().rev() {
            out[pos] = joint % r;
            joint /= r;
        }
        out
    }

    /// Action of the member at `pos` within joint action `joint`.
    pub fn component(&self, joint: usize, pos: usize) -> ActionId {
        let below: usize = self.radices[pos + 1..].iter().product();
        (joint / below) % self.radices[pos]
    }

    pub fn encode(&self, actions: &[ActionId]) -> usize {
        actions
            .iter()
            .zip(&self.radices)
            .fold(0, |acc, (&a, &r)| acc * r + a)
    }
}

/// Factored view of one interaction point: joint states, joint actions,
/// product transitions and owner-filtered utility.
#[derive(Clone, Debug)]
pub struct InteractionProduct<'a> {
    instance: &'a MccSspInstance,
    point: &'a InteractionPoint,
    codec: JointActionCodec,
}

/// Factored space of interaction point `i`.
pub fn interaction_product(
    instance: &MccSspInstance,
    i: usize,
) -> Result<InteractionProduct<'_>, ModelError> {
    let point = instance
        .interactions
        .get(i)
        .ok_or(ModelError::UnknownInteraction(i))?;
    let codec = JointActionCodec::new(
        point
            .members
            .iter()
            .map(|&m| instance.agents[m].num_actions())
            .collect(),
    );
    Ok(InteractionProduct {
        instance,
        point,
        codec,
    })
}

impl<'a> InteractionProduct<'a> {
    pub fn members(&self) -> &[usize] {
        &self.point.members
    }

    pub fn codec(&self) -> &JointActionCodec {
        &self.codec
    }

    pub fn num_joint_actions(&self) -> usize {
        self.codec.len()
    }

    pub fn initial_state(&self) -> Vec<StateId> {
        self.point
            .members
            .iter()
            .map(|&m| self.instance.agents[m].initial_state())
            .collect()
    }

    pub fn available(&self, joint_state: &[StateId], joint_action: usize) -> bool {
        self.point.members.iter().enumerate().all(|(pos, &m)| {
            self.instance.agents[m]
                .action_available(joint_state[pos], self.codec.component(joint_action, pos))
        })
    }

    /// Product of member transitions.
    pub fn transition(
        &self,
        joint_state: &[StateId],
        joint_action: usize,
    ) -> Vec<(Vec<StateId>, f64)> {
        let actions = self.codec.decode(joint_action);
        let marginals: Vec<Vec<(StateId, f64)>> = self
            .point
            .members
            .iter()
            .enumerate()
            .map(|(pos, &m)| {
                let mut buf = Vec::new();
                self.instance.agents[m].transition(joint_state[pos], actions[pos], &mut buf);
                buf.retain(|(_, p)| *p > 0.0);
                buf
            })
            .collect();
        product_distribution(&marginals)
    }

    /// Sum of member utilities, counting only members owned by this point.
    pub fn utility(&self, joint_state: &[StateId], joint_action: usize) -> f64 {
        self.point
            .members
            .iter()
            .enumerate()
            .filter(|(pos, _)| self.point.utility_owner[*pos])
            .map(|(pos, &m)| {
                self.instance.agents[m]
                    .utility(joint_state[pos], self.codec.component(joint_action, pos))
            })
            .sum()
    }
}

/// Distribution over tuples from independent marginals.
pub(crate) fn product_distribution(marginals: &[Vec<(StateId, f64)>]) -> Vec<(Vec<StateId>, f64)> {
    let mut out: Vec<(Vec<StateId>, f64)> = vec![(Vec::with_capacity(marginals.len()), 1.0)];
    for marginal in marginals {
        let mut next = Vec::with_capacity(out.len() * marginal.len());
        for (prefix, p) in &out {
            for &(s, q) in marginal {
                let mut t = prefix.clone();
                t.push(s);
                next.push((t, p * q));
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin() -> TabularMdp {
        TabularMdp {
            states: vec!["h".into(), "t".into()],
            actions: vec!["flip".into(), "keep".into()],
            transitions: vec![
                vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 1.0)]],
                vec![vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]],
            ],
            utility: vec![vec![1.0, 0.0], vec![2.0, 0.0]],
            initial_state: 0,
        }
    }

    fn single(agent: TabularMdp) -> MccSspInstance {
        let mut inst = MccSspInstance::new(2, vec![0.1]);
        let a = inst.add_agent("a", Arc::new(agent));
        inst.add_interaction(InteractionPoint::new(vec![a], vec![Arc::new(NoRisk)]));
        inst.assign_default_utility_owners();
        inst
    }

    #[test]
    fn well_formed_instance_is_valid() {
        let report = validate_instance(&single(coin()));
        assert!(report.is_valid(), "{:?}", report.messages());
    }

    #[test]
    fn unnormalized_row_is_reported() {
        let mut agent = coin();
        agent.transitions[1][0] = vec![(0, 0.45), (1, 0.45)];
        let report = validate_instance(&single(agent));
        let msgs = report.messages();
        assert_eq!(msgs.len(), 1, "{msgs:?}");
        assert!(msgs[0].contains("distribution not normalized"));
        assert!(matches!(
            report.violations[0],
            Violation::DistributionNotNormalized {
                state: 1,
                action: 0,
                ..
            }
        ));
    }

    #[test]
    fn near_normalized_rows_are_rescaled() {
        let mut agent = coin();
        agent.transitions[0][0] = vec![(0, 0.5 + 4e-10), (1, 0.5)];
        agent.renormalize();
        let sum: f64 = agent.transitions[0][0].iter().map(|x| x.1).sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uncovered_agent_is_reported() {
        let mut inst = single(coin());
        inst.add_agent("lonely", Arc::new(coin()));
        let report = validate_instance(&inst);
        assert!(report
            .messages()
            .iter()
            .any(|m| m.contains("coverage violation")));
    }

    #[test]
    fn owner_counted_exactly_once() {
        let mut inst = MccSspInstance::new(1, vec![0.1]);
        let a = inst.add_agent("a", Arc::new(coin()));
        let b = inst.add_agent("b", Arc::new(coin()));
        inst.add_interaction(InteractionPoint::new(vec![a, b], vec![Arc::new(NoRisk)]));
        inst.add_interaction(InteractionPoint::new(vec![b], vec![Arc::new(NoRisk)]));
        assert!(!validate_instance(&inst).is_valid());
        inst.assign_default_utility_owners();
        assert!(validate_instance(&inst).is_valid());
        assert_eq!(inst.utility_owner_of(b), Some(0));
        inst.set_utility_owner(b, 1).unwrap();
        assert_eq!(inst.utility_owner_of(b), Some(1));
        assert!(validate_instance(&inst).is_valid());
        inst.interactions[0].utility_owner[1] = true;
        assert!(matches!(
            validate_instance(&inst).violations[..],
            [Violation::UtilityOwnerCount { agent: 1, count: 2 }]
        ));
    }

    #[test]
    fn risk_out_of_range_is_reported() {
        let mut inst = single(coin());
        let mut table = JointRiskTable::default();
        table.entries.insert(vec![0], 1.5);
        inst.interactions[0].risks[0] = Arc::new(table);
        assert!(matches!(
            validate_instance(&inst).violations[..],
            [Violation::RiskOutOfRange { .. }]
        ));
        inst.interactions[0].risks[0] = Arc::new(FnRisk(|_: &[StateId]| -0.1));
        assert!(!validate_instance(&inst).is_valid());
    }

    #[test]
    fn product_of_two_members() {
        let mut inst = MccSspInstance::new(1, vec![0.1]);
        let a = inst.add_agent("a", Arc::new(coin()));
        let b = inst.add_agent("b", Arc::new(coin()));
        inst.add_interaction(InteractionPoint::new(vec![a, b], vec![Arc::new(NoRisk)]));
        inst.add_interaction(InteractionPoint::new(vec![b], vec![Arc::new(NoRisk)]));
        inst.assign_default_utility_owners();
        inst.set_utility_owner(b, 1).unwrap();

        let view = interaction_product(&inst, 0).unwrap();
        assert_eq!(view.num_joint_actions(), 4);
        assert_eq!(view.initial_state(), vec![0, 0]);
        let succ = view.transition(&[0, 0], view.codec().encode(&[0, 0]));
        assert_eq!(succ.len(), 4);
        for (_, p) in &succ {
            assert!((p - 0.25).abs() < 1e-15);
        }
        // b's utility is owned by interaction 1.
        assert_eq!(view.utility(&[1, 1], view.codec().encode(&[0, 0])), 2.0);
        let other = interaction_product(&inst, 1).unwrap();
        assert_eq!(other.utility(&[1], 0), 2.0);
        assert!(matches!(
            interaction_product(&inst, 7),
            Err(ModelError::UnknownInteraction(7))
        ));
    }

    #[test]
    fn codec_round_trip_and_order() {
        let codec = JointActionCodec::new(vec![2, 3]);
        assert_eq!(codec.len(), 6);
        for j in 0..6 {
            let d = codec.decode(j);
            assert_eq!(codec.encode(&d), j);
            assert_eq!(codec.component(j, 0), d[0]);
            assert_eq!(codec.component(j, 1), d[1]);
        }
        assert_eq!(codec.decode(4), vec![1, 1]);
    }

    #[test]
    fn materialize_keeps_reachable_part() {
        let chain = TabularMdp::chain(10, 1.0);
        let small = TabularMdp::materialize(&chain, 3);
        assert_eq!(small.states.len(), 4);
        assert_eq!(small.transitions[3][0], vec![(3, 1.0)]);
    }
}
