//! Seeded random small instances for cross-checking the integer program
//! against exhaustive search.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::layers::reachable_layers;
use crate::model::{
    InteractionPoint, JointRiskTable, MccSspInstance, RiskModel, StateId, TabularMdp,
};
use crate::oracle::count_policies;
use crate::seed;

/// Size limits of generated instances.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomSpec {
    pub max_horizon: usize,
    pub max_interactions: usize,
    pub max_members: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub max_criteria: usize,
    /// Draws with more deterministic policies than this are rejected and
    /// redrawn, keeping exhaustive search fast.
    pub max_policies: u64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            max_horizon: 3,
            max_interactions: 2,
            max_members: 2,
            max_states: 4,
            max_actions: 3,
            max_criteria: 2,
            max_policies: 20_000,
        }
    }
}

fn random_agent(rng: &mut ChaCha8Rng, spec: &RandomSpec) -> TabularMdp {
    let n_states = rng.random_range(2..=spec.max_states.max(2));
    let n_actions = rng.random_range(2..=spec.max_actions.max(2));
    let transitions = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let a = rng.random_range(0..n_states);
                    if rng.random_bool(0.5) {
                        vec![(a, 1.0)]
                    } else {
                        let b = (a + rng.random_range(1..n_states)) % n_states;
                        let p: f64 = rng.random_range(0.1..0.9);
                        vec![(a, p), (b, 1.0 - p)]
                    }
                })
                .collect()
        })
        .collect();
    let utility = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| rng.random_range(0.0..10.0))
                .collect()
        })
        .collect();
    TabularMdp {
        states: (0..n_states).map(|s| format!("s{s}")).collect(),
        actions: (0..n_actions).map(|a| format!("a{a}")).collect(),
        transitions,
        utility,
        initial_state: 0,
    }
}

fn random_risk(rng: &mut ChaCha8Rng, sizes: &[usize]) -> JointRiskTable {
    let mut table = JointRiskTable::default();
    let total: usize = sizes.iter().product();
    for mut code in 0..total {
        let mut joint: Vec<StateId> = vec![0; sizes.len()];
        for (pos, &n) in sizes.iter().enumerate().rev() {
            joint[pos] = (code % n) as StateId;
            code /= n;
        }
        let initial = joint.iter().all(|&s| s == 0);
        let p = if initial { 0.2 } else { 0.45 };
        if rng.random_bool(p) {
            table.entries.insert(joint, rng.random_range(0.0..0.3));
        }
    }
    table
}

fn draw(rng: &mut ChaCha8Rng, spec: &RandomSpec) -> MccSspInstance {
    let horizon = rng.random_range(1..=spec.max_horizon);
    let n_criteria = rng.random_range(1..=spec.max_criteria);
    let budgets = (0..n_criteria)
        .map(|_| rng.random_range(0.0..0.35))
        .collect();
    let mut inst = MccSspInstance::new(horizon, budgets);
    let n_interactions = rng.random_range(1..=spec.max_interactions);
    let mut sizes: Vec<usize> = Vec::new();
    for i in 0..n_interactions {
        let n_members = rng.random_range(1..=spec.max_members);
        let mut members = Vec::with_capacity(n_members);
        // Later interaction points may share an existing agent.
        if i > 0 && !inst.agents.is_empty() && rng.random_bool(0.5) {
            members.push(rng.random_range(0..inst.agents.len()));
        }
        while members.len() < n_members {
            let agent = random_agent(rng, spec);
            sizes.push(agent.states.len());
            let id = inst.add_agent(format!("agent{}", inst.agents.len()), Arc::new(agent));
            members.push(id);
        }
        let member_sizes: Vec<usize> = members.iter().map(|&m| sizes[m]).collect();
        let risks: Vec<Arc<dyn RiskModel>> = (0..n_criteria)
            .map(|_| Arc::new(random_risk(rng, &member_sizes)) as Arc<dyn RiskModel>)
            .collect();
        inst.add_interaction(InteractionPoint::new(members, risks));
    }
    inst.assign_default_utility_owners();
    inst
}

/// A random instance within `spec`, deterministic in `seed`.
pub fn random_instance(seed: u64, spec: &RandomSpec) -> MccSspInstance {
    for attempt in 0u64.. {
        let mut rng = seed::rng(seed::derive(seed, &[attempt]));
        let inst = draw(&mut rng, spec);
        let space = reachable_layers(&inst);
        if count_policies(&inst, &space, spec.max_policies).is_some() {
            return inst;
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_instance;

    #[test]
    fn instances_are_valid_and_deterministic() {
        let spec = RandomSpec::default();
        for s in 0..30 {
            let a = random_instance(s, &spec);
            assert!(
                validate_instance(&a).is_valid(),
                "{:?}",
                validate_instance(&a).messages()
            );
            let b = random_instance(s, &spec);
            assert_eq!(a.horizon, b.horizon);
            assert_eq!(a.risk_budgets, b.risk_budgets);
            assert!(a.interactions.len() <= 2);
        }
    }
}
