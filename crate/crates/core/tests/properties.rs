use mccssp_core::pft::{
    intent_posterior, risk_from_step_probs, window_risk, CollisionMatrix, Motion, Pft,
};
use mccssp_core::risk::state_risk_tilde;
use proptest::prelude::*;

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 0..12)
}

proptest! {
    #[test]
    fn aggregate_risk_is_a_probability_between_max_and_sum(p in probs()) {
        let r = state_risk_tilde(&p).unwrap();
        let max = p.iter().copied().fold(0.0, f64::max);
        let sum: f64 = p.iter().sum();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(r >= max - 1e-12);
        prop_assert!(r <= sum + 1e-12);
        prop_assert_eq!(r, risk_from_step_probs(&p));
    }

    #[test]
    fn step_risk_never_decreases_with_more_steps(p in probs(), extra in 0.0..=1.0f64) {
        let mut longer = p.clone();
        longer.push(extra);
        prop_assert!(risk_from_step_probs(&longer) >= risk_from_step_probs(&p) - 1e-15);
    }

    #[test]
    fn window_risk_grows_with_window(
        rows in prop::collection::vec(prop::collection::vec(0.0..0.5f64, 6), 1..6),
        a in 0usize..8,
        b in 0usize..8,
        frozen in any::<bool>(),
        steps in 0usize..10,
    ) {
        let m = CollisionMatrix::from_rows(rows);
        let ma = if frozen { Motion::Frozen(a) } else { Motion::Moving(a) };
        let mb = Motion::Moving(b);
        let short = window_risk(&m, ma, mb, steps);
        let long = window_risk(&m, ma, mb, steps + 1);
        prop_assert!((0.0..=1.0).contains(&short));
        prop_assert!(long >= short - 1e-15);
    }

    #[test]
    fn intent_posterior_is_normalised(
        prior in prop::collection::vec(0.01..1.0f64, 2),
        prefix in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 0..8),
    ) {
        let cov = [[0.25, 0.0], [0.0, 0.25]];
        let east = Pft::new(0.1, (0..8).map(|i| [i as f64, 0.0]).collect(), vec![cov; 8], "east").unwrap();
        let north = Pft::new(0.1, (0..8).map(|i| [0.0, i as f64]).collect(), vec![cov; 8], "north").unwrap();
        let prefix: Vec<[f64; 2]> = prefix.into_iter().map(|(x, y)| [x, y]).collect();
        let post = intent_posterior(&prior, &[&east, &north], &prefix).unwrap();
        prop_assert!(post.iter().all(|&w| (0.0..=1.0).contains(&w)));
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
