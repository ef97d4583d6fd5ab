#![allow(dead_code)]

use mccssp_core::layers::LayeredSpace;
use mccssp_core::Policy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stochastic policy with random weights on every available joint action.
pub fn random_policy(space: &LayeredSpace, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices = space
        .interactions
        .iter()
        .map(|il| {
            il.layers[..space.horizon]
                .iter()
                .map(|layer| {
                    layer
                        .edges
                        .iter()
                        .map(|edges| {
                            let w: Vec<f64> =
                                edges.iter().map(|_| rng.random_range(0.05..1.0)).collect();
                            let total: f64 = w.iter().sum();
                            edges
                                .iter()
                                .zip(w)
                                .map(|(e, w)| (e.joint_action, w / total))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Policy { choices }
}

/// Failure probability of one interaction point by explicit enumeration of
/// execution paths: mass surviving to `(k, s)` fails there with `risk[s]`.
pub fn path_failure(space: &LayeredSpace, policy: &Policy, i: usize, j: usize) -> f64 {
    fn walk(
        space: &LayeredSpace,
        policy: &Policy,
        i: usize,
        j: usize,
        k: usize,
        s: usize,
        mass: f64,
    ) -> f64 {
        let layer = &space.interactions[i].layers[k];
        let r = layer.risk[j][s];
        let mut fail = mass * r;
        if k == space.horizon {
            return fail;
        }
        let alive = mass * (1.0 - r);
        for &(ja, p) in &policy.choices[i][k][s] {
            let edge = layer.edges[s]
                .iter()
                .find(|e| e.joint_action == ja)
                .unwrap();
            for &(t, q) in &edge.successors {
                fail += walk(space, policy, i, j, k + 1, t, alive * p * q);
            }
        }
        fail
    }
    walk(space, policy, i, j, 0, 0, 1.0)
}

/// Expected utility by path enumeration.
pub fn path_utility(space: &LayeredSpace, policy: &Policy) -> f64 {
    fn walk(space: &LayeredSpace, policy: &Policy, i: usize, k: usize, s: usize, mass: f64) -> f64 {
        if k == space.horizon {
            return 0.0;
        }
        let layer = &space.interactions[i].layers[k];
        let mut total = 0.0;
        for &(ja, p) in &policy.choices[i][k][s] {
            let edge = layer.edges[s]
                .iter()
                .find(|e| e.joint_action == ja)
                .unwrap();
            total += mass * p * edge.utility;
            for &(t, q) in &edge.successors {
                total += walk(space, policy, i, k + 1, t, mass * p * q);
            }
        }
        total
    }
    (0..space.interactions.len())
        .map(|i| walk(space, policy, i, 0, 0, 1.0))
        .sum()
}
