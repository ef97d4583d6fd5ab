mod common;

use mccssp::backend::{HighsBackend, MicrolpBackend};
use mccssp_core::ilp::{plan, MilpBackend, SolveOptions, SolveStatus};
use mccssp_core::oracle::{brute_force_optimal, DEFAULT_POLICY_CAP};
use mccssp_core::random::{random_instance, RandomSpec};
use mccssp_core::risk::{interaction_execution_risks, linear_risk_form, occupancy_flows};
use mccssp_core::{execution_risk, expected_utility, reachable_layers};

fn check_against_brute_force(backend: &mut dyn MilpBackend, seeds: std::ops::Range<u64>) {
    let spec = RandomSpec::default();
    let opts = SolveOptions::default();
    for seed in seeds {
        let inst = random_instance(seed, &spec);
        let (space, result) = plan(&inst, backend, &opts).unwrap();
        let bf = brute_force_optimal(&inst, &space, DEFAULT_POLICY_CAP).unwrap();
        match result.status {
            SolveStatus::Optimal => {
                assert!(bf.is_feasible(), "seed {seed}: solver feasible, search not");
                assert!(
                    (result.utility - bf.objective).abs() <= 1e-6,
                    "seed {seed}: {} vs {}",
                    result.utility,
                    bf.objective
                );
                for (j, (&r, &d)) in result.risks.iter().zip(&inst.risk_budgets).enumerate() {
                    assert!(r <= d + 1e-9, "seed {seed}: criterion {j} risk {r} > {d}");
                }
            }
            SolveStatus::Infeasible | SolveStatus::BudgetExhausted => {
                assert!(
                    !bf.is_feasible(),
                    "seed {seed}: {:?} but search found {}",
                    result.status,
                    bf.objective
                )
            }
            SolveStatus::TimeLimit => panic!("seed {seed}: time limit"),
        }
    }
}

#[test]
fn highs_matches_exhaustive_search() {
    check_against_brute_force(&mut HighsBackend, 0..120);
}

#[test]
fn microlp_matches_exhaustive_search() {
    check_against_brute_force(&mut MicrolpBackend, 1000..1040);
}

#[test]
fn risk_routes_agree_on_random_policies() {
    let spec = RandomSpec::default();
    for seed in 0..60u64 {
        let inst = random_instance(seed, &spec);
        let space = reachable_layers(&inst);
        let policy = common::random_policy(&space, seed ^ 0xabc);
        for j in 0..space.num_criteria {
            let recursion = interaction_execution_risks(&space, &policy, j).unwrap();
            let paths: Vec<f64> = (0..space.interactions.len())
                .map(|i| common::path_failure(&space, &policy, i, j))
                .collect();
            for (a, b) in recursion.iter().zip(&paths) {
                assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
            }
            let flows = occupancy_flows(&space, &policy, Some(j)).unwrap();
            let linear = linear_risk_form(&space, &flows, j);
            let er = execution_risk(&space, &policy, j).unwrap();
            assert!((linear - er).abs() <= 1e-9, "seed {seed}: {linear} vs {er}");
        }
        let u = expected_utility(&space, &policy).unwrap();
        assert!((u - common::path_utility(&space, &policy)).abs() <= 1e-9);
    }
}
