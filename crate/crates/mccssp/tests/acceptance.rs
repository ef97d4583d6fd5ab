//! Acceptance criteria, run in order with one PASS/FAIL line each. Runs
//! without the test harness so that timing criteria do not compete with
//! other tests.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use mccssp::backend::HighsBackend;
use mccssp::experiments::{grid_bench, intersection_sweep, plan_time, risky_chain, SweepConfig};
use mccssp_core::grid::{generate_grid_instance, GridSpec};
use mccssp_core::ilp::{build_ilp, default_policy, plan, RowKind, SolveOptions, SolveStatus};
use mccssp_core::intersection::library::ManeuverLibrary;
use mccssp_core::intersection::planner::PlannerKind;
use mccssp_core::intersection::scenario::Scenario;
use mccssp_core::intersection::sim::{first_entry_step, Metrics};
use mccssp_core::oracle::{brute_force_optimal, DEFAULT_POLICY_CAP};
use mccssp_core::pft::{
    cell_seed, collision_prob_at, intent_posterior, precompute_risk_table, risk_from_step_probs,
    Cov, Pft, VehicleGeometry,
};
use mccssp_core::random::{random_instance, RandomSpec};
use mccssp_core::{execution_risk, reachable_layers};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

const DELTAS: [f64; 6] = [1e-4, 1e-3, 0.01, 0.05, 0.10, 0.15];
const HV_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const REPLICATIONS: u64 = 100;
const SIM_SECONDS: f64 = 60.0;
/// Relative slack on timing comparisons of criterion 5.
const TIMING_SLACK: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("risk identity", risk_identity),
        ("closed-form chain", closed_form_chain),
        ("ambient-size invariance", ambient_size_invariance),
        ("scalability trend", scalability_trend),
        ("planning-time envelope", planning_time_envelope),
        ("intersection trends", intersection_trends),
        ("waiting-time case study", waiting_time_case_study),
        ("flow tube suite", flow_tube_suite),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {verdict}: {name}: {} [{:.1}s]",
            n + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn oracle_equivalence() -> Outcome {
    let spec = RandomSpec::default();
    let options = SolveOptions::default();
    let mut backend = HighsBackend;
    let mut feasible = 0;
    let mut failures = Vec::new();
    for seed in 0..200u64 {
        let inst = random_instance(seed, &spec);
        let (space, result) = plan(&inst, &mut backend, &options).expect("solve");
        let bf = brute_force_optimal(&inst, &space, DEFAULT_POLICY_CAP).expect("search");
        match (result.status, bf.is_feasible()) {
            (SolveStatus::Optimal, true) => {
                feasible += 1;
                if (result.utility - bf.objective).abs() > 1e-6 {
                    failures.push(format!(
                        "seed {seed}: {} vs {}",
                        result.utility, bf.objective
                    ));
                }
                let policy = result.policy.as_ref().expect("policy");
                for (j, &budget) in inst.risk_budgets.iter().enumerate() {
                    let er = execution_risk(&space, policy, j).expect("risk");
                    if er > budget + 1e-9 {
                        failures.push(format!("seed {seed}: risk {er} > {budget}"));
                    }
                }
            }
            (SolveStatus::Infeasible | SolveStatus::BudgetExhausted, false) => {}
            (status, f) => failures.push(format!("seed {seed}: {status:?}, search feasible {f}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "200 instances, {feasible} feasible, {} mismatches {:?}",
            failures.len(),
            failures.first()
        ),
    )
}

fn risk_identity() -> Outcome {
    let spec = RandomSpec::default();
    let mut flows_checked = 0;
    let mut worst: f64 = 0.0;
    let mut infeasible_flows = 0;
    // Instances whose initial states exhaust the budget have no program.
    for seed in 0.. {
        if flows_checked == 100 {
            break;
        }
        let inst = random_instance(seed, &spec);
        let space = reachable_layers(&inst);
        let Ok(model) = build_ilp(&inst, &space) else {
            continue;
        };
        let policy = common::random_policy(&space, seed ^ 0x1d);
        let values = model.columns_from_policy(&space, &policy).expect("flows");
        for (row, kind) in model.matrix.rows.iter().zip(&model.row_kinds) {
            if matches!(kind, RowKind::Flow | RowKind::Initial) {
                let lhs: f64 = row.terms.iter().map(|&(c, a)| a * values[c]).sum();
                let ok = row.lower.map_or(true, |l| lhs >= l - 1e-9)
                    && row.upper.map_or(true, |u| lhs <= u + 1e-9);
                infeasible_flows += usize::from(!ok);
            }
        }
        for j in 0..space.num_criteria {
            let linear = model.risk_row_value(j, &values) + space.initial_risk(j);
            let er = execution_risk(&space, &policy, j).expect("risk");
            worst = worst.max((linear - er).abs());
        }
        flows_checked += 1;
    }
    outcome(
        flows_checked == 100 && worst <= 1e-9 && infeasible_flows == 0,
        format!("{flows_checked} random flows, max |linear - recursion| {worst:.2e}, {infeasible_flows} violated flow rows"),
    )
}

fn closed_form_chain() -> Outcome {
    let inst = risky_chain(3, 0.1);
    let space = reachable_layers(&inst);
    let model = build_ilp(&inst, &space).expect("model");
    let policy = default_policy(&space);
    let recursion = execution_risk(&space, &policy, 0).expect("risk");
    let values = model.columns_from_policy(&space, &policy).expect("flows");
    let linear = model.risk_row_value(0, &values) + space.initial_risk(0);
    outcome(
        (recursion - 0.271).abs() <= 1e-12 && (linear - 0.271).abs() <= 1e-12,
        format!("recursion {recursion:.15}, linear {linear:.15}"),
    )
}

fn ambient_size_invariance() -> Outcome {
    let base = GridSpec {
        n_agents: 3,
        horizon: 4,
        seed: 7,
        starts: Some(vec![(40, 40), (55, 60), (70, 45)]),
        ..GridSpec::default()
    };
    let mut shapes = Vec::new();
    for side in [100, 10_000] {
        let spec = GridSpec {
            width: side,
            height: side,
            ..base.clone()
        };
        let inst = generate_grid_instance(&spec).expect("grid");
        let (space, result) =
            plan(&inst, &mut HighsBackend, &SolveOptions::default()).expect("solve");
        let model = build_ilp(&inst, &space).expect("model");
        shapes.push((
            model.matrix.columns.len(),
            model.matrix.rows.len(),
            result.utility,
            result.status,
        ));
    }
    let (a, b) = (shapes[0], shapes[1]);
    outcome(
        a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() <= 1e-9 && a.3 == b.3,
        format!(
            "100x100: {} columns {} rows objective {}; 10000x10000: {} columns {} rows objective {}",
            a.0, a.1, a.2, b.0, b.1, b.2
        ),
    )
}

fn scalability_trend() -> Outcome {
    let agents: Vec<usize> = (1..=4).collect();
    let horizons: Vec<usize> = (1..=5).collect();
    let rows = grid_bench(
        &GridSpec::default(),
        &agents,
        &horizons,
        "highs",
        &SolveOptions::default(),
        3,
    )
    .expect("bench");
    let time = |n: usize, h: usize| {
        rows.iter()
            .find(|r| r.n_agents == n && r.horizon == h)
            .map(|r| r.solve_s)
            .expect("row")
    };
    let mut pairs = Vec::new();
    for &n in &agents {
        for h in horizons.windows(2) {
            pairs.push(((n, h[0]), (n, h[1])));
        }
    }
    for &h in &horizons {
        for n in agents.windows(2) {
            pairs.push(((n[0], h), (n[1], h)));
        }
    }
    let strict = pairs
        .iter()
        .filter(|(a, b)| time(b.0, b.1) >= time(a.0, a.1))
        .count();
    let violations: Vec<String> = pairs
        .iter()
        .filter(|(a, b)| time(b.0, b.1) < TIMING_SLACK * time(a.0, a.1))
        .map(|(a, b)| format!("{a:?}->{b:?}"))
        .collect();
    let first = time(1, 1);
    let last = time(4, 5);
    outcome(
        violations.is_empty() && last > first,
        format!(
            "{strict}/{} neighbouring pairs non-decreasing, {} below {TIMING_SLACK}x the smaller size {violations:?}; (1,1) {first:.4}s, (4,5) {last:.3}s",
            pairs.len(),
            violations.len()
        ),
    )
}

fn planning_time_envelope() -> Outcome {
    let scenario = Scenario {
        speeds: vec![6.0],
        ..Scenario::default()
    };
    let library = Arc::new(ManeuverLibrary::build(&scenario).expect("library"));
    let rows = plan_time(
        &scenario,
        &library,
        &[1, 2, 3, 4],
        8,
        0..10,
        "highs",
        &SolveOptions::default(),
    )
    .expect("plan");
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("h={} {:.3}s", r.horizon, r.mean_plan_s))
        .collect();
    let soft = rows.iter().all(|r| r.mean_plan_s < 1.0);
    outcome(
        rows[0].mean_plan_s < 1.0 && rows[0].vehicles == 16,
        format!(
            "{} vehicles, mean plan time {}; all horizons under 1 s: {soft}",
            rows[0].vehicles,
            summary.join(", ")
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_err(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        for &o in &order[i..=j] {
            r[o] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

fn intersection_trends() -> Outcome {
    let scenario = Scenario::default();
    let library = Arc::new(ManeuverLibrary::build(&scenario).expect("library"));
    let seeds: Vec<u64> = (0..REPLICATIONS).collect();
    let sweep = |planners: Vec<PlannerKind>, deltas: Vec<f64>, hv: Vec<f64>| -> Vec<Metrics> {
        let config = SweepConfig {
            planners,
            deltas,
            horizons: vec![scenario.horizon],
            hv_fractions: hv,
            seeds: seeds.clone(),
            duration_s: SIM_SECONDS,
        };
        intersection_sweep(
            &scenario,
            &library,
            &config,
            "highs",
            &SolveOptions::default(),
        )
        .expect("sweep")
    };
    let runs = sweep(
        vec![PlannerKind::MccSsp, PlannerKind::Fcfs],
        DELTAS.to_vec(),
        vec![0.0],
    );
    let cell = |planner: PlannerKind, delta: f64| -> Vec<&Metrics> {
        let mut v: Vec<&Metrics> = runs
            .iter()
            .filter(|m| m.planner == planner && m.delta == delta)
            .collect();
        v.sort_by_key(|m| m.seed);
        v
    };
    let normal = Normal::new(0.0, 1.0).expect("normal");
    let z99 = normal.inverse_cdf(0.995);

    let mut a_pass = true;
    let mut a_detail = Vec::new();
    let mut d_pass = true;
    let mut d_detail = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &delta in &DELTAS {
        let mcc = cell(PlannerKind::MccSsp, delta);
        let fcfs = cell(PlannerKind::Fcfs, delta);
        let diffs: Vec<f64> = mcc
            .iter()
            .zip(&fcfs)
            .map(|(a, b)| a.throughput_vpm - b.throughput_vpm)
            .collect();
        let se = std_err(&diffs);
        let t = mean(&diffs) / se;
        let dist = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64).expect("t");
        let p = 1.0 - dist.cdf(t);
        a_pass &= p < 0.05;
        a_detail.push(format!("{delta}: {:+.2} (p={p:.1e})", mean(&diffs)));

        let steps: usize = mcc.iter().map(|m| m.steps).sum();
        let collisions: usize = mcc.iter().map(|m| m.collisions).sum();
        let freq = collisions as f64 / steps as f64;
        let half = z99 * (freq * (1.0 - freq) / steps as f64).sqrt();
        d_pass &= freq <= delta + half;
        d_detail.push(format!("{delta}: {freq:.5}"));

        for m in &mcc {
            xs.push(delta);
            ys.push(m.throughput_vpm);
        }
    }
    let rho = spearman(&xs, &ys);
    let b_pass = rho >= 0.0;

    let hv_delta = scenario.delta;
    let hv_runs = sweep(
        vec![PlannerKind::MccSsp],
        vec![hv_delta],
        HV_FRACTIONS.to_vec(),
    );
    let by_hv: Vec<Vec<f64>> = HV_FRACTIONS
        .iter()
        .map(|&hv| {
            let mut v: Vec<&Metrics> = hv_runs.iter().filter(|m| m.hv_fraction == hv).collect();
            v.sort_by_key(|m| m.seed);
            v.iter().map(|m| m.throughput_vpm).collect()
        })
        .collect();
    let mut c_pass = true;
    for w in by_hv.windows(2) {
        let diffs: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
        c_pass &= mean(&diffs) <= 2.0 * std_err(&diffs);
    }
    let hv_means: Vec<String> = by_hv.iter().map(|v| format!("{:.1}", mean(v))).collect();

    outcome(
        a_pass && b_pass && c_pass && d_pass,
        format!(
            "(a) {} MCC-FCFS [{}]; (b) {} rho={rho:.3}; (c) {} by HV fraction [{}]; (d) {} collision frequency [{}]",
            verdict(a_pass),
            a_detail.join(", "),
            verdict(b_pass),
            verdict(c_pass),
            hv_means.join(", "),
            verdict(d_pass),
            d_detail.join(", ")
        ),
    )
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn waiting_time_case_study() -> Outcome {
    let mut entries = Vec::new();
    for weight in [0.0, 4.0] {
        let scenario = Scenario::waiting_time_case(weight);
        let library = Arc::new(ManeuverLibrary::build(&scenario).expect("library"));
        let step = first_entry_step(
            &scenario,
            library,
            0,
            30,
            &mut HighsBackend,
            &SolveOptions::default(),
        )
        .expect("sim");
        entries.push(step.map(|k| k + 1));
    }
    outcome(
        entries[0].is_none() && entries[1].is_some_and(|k| k <= 11),
        format!(
            "ego enters at horizon {:?} with weight 0, {:?} with weight 4",
            entries[0], entries[1]
        ),
    )
}

fn tube(means: Vec<[f64; 2]>, cov: Cov, label: &str) -> Pft {
    let covs = vec![cov; means.len()];
    Pft::new(1.0 / 6.0, means, covs, label).expect("tube")
}

fn flow_tube_suite() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;

    let formula = risk_from_step_probs(&[0.1, 0.1]);
    let ok = (formula - 0.19).abs() <= f64::EPSILON;
    pass &= ok;
    parts.push(format!("{{0.1,0.1}} -> {formula} ({})", verdict(ok)));

    // Two vehicles heading north side by side, only the first uncertain and
    // only across the road: they overlap exactly when |x1 - d| <= r1 + r2.
    let g = VehicleGeometry::default();
    let sigma = 1.0;
    let d = 2.0;
    let a = tube(
        vec![[0.0, 0.0], [0.0, 1.0]],
        [[sigma * sigma, 0.0], [0.0, 0.0]],
        "a",
    );
    let b = tube(vec![[d, 0.0], [d, 1.0]], [[0.0, 0.0], [0.0, 0.0]], "b");
    let n = 20_000;
    let mc = collision_prob_at(&a, 0, &b, 0, &g, &g, n, 11).expect("sample");
    let limit = 2.0 * g.radius();
    let normal = Normal::new(0.0, sigma).expect("normal");
    let exact = normal.cdf(d + limit) - normal.cdf(d - limit);
    let ok = (mc - exact).abs() <= 3.0 / (n as f64).sqrt();
    pass &= ok;
    parts.push(format!(
        "1-D overlap {mc:.4} vs {exact:.4} ({})",
        verdict(ok)
    ));

    let east: Vec<[f64; 2]> = (0..24).map(|t| [-12.0 + t as f64, -1.5]).collect();
    let north: Vec<[f64; 2]> = (0..24).map(|t| [1.5, -14.0 + 1.2 * t as f64]).collect();
    let cov = [[0.3, 0.05], [0.05, 0.2]];
    let (t1, t2) = (tube(east, cov, "east"), tube(north, cov, "north"));
    let (stride, window, samples, seed) = (6, 12, 400, 5);
    let table = precompute_risk_table(&[&t1, &t2], &[g, g], stride, window, samples, seed);
    let mut worst: f64 = 0.0;
    let dims = table.dims();
    // Index 0 waits at the tube start; index p >= 1 drives from (p - 1) * stride.
    let at = |p: usize, t: usize, len: usize| -> Option<usize> {
        if p == 0 {
            Some(0)
        } else {
            let i = (p - 1) * stride + t;
            (i < len).then_some(i)
        }
    };
    for p1 in 0..dims[0] {
        for p2 in 0..dims[1] {
            let mut probs = Vec::new();
            for t in 0..window {
                match (at(p1, t, t1.len()), at(p2, t, t2.len())) {
                    (Some(i), Some(j)) => probs.push(
                        collision_prob_at(&t1, i, &t2, j, &g, &g, samples, cell_seed(seed, i, j))
                            .expect("sample"),
                    ),
                    _ => break,
                }
            }
            let direct = risk_from_step_probs(&probs);
            worst = worst.max((table.get(&[p1, p2]).expect("entry") - direct).abs());
        }
    }
    let ok = worst <= 1e-12;
    pass &= ok;
    parts.push(format!(
        "table vs direct sampling max diff {worst:.1e} ({})",
        verdict(ok)
    ));

    let sd = 0.3;
    let c = [[sd * sd, 0.0], [0.0, sd * sd]];
    let straight = tube(
        (0..30).map(|t| [t as f64 * 0.5, 0.0]).collect(),
        c,
        "straight",
    );
    let offset = tube(
        (0..30).map(|t| [t as f64 * 0.5, 0.15 * t as f64]).collect(),
        c,
        "veer",
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gauss = || {
        let (u, v): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    };
    let prefix: Vec<[f64; 2]> = straight
        .means
        .iter()
        .map(|m| [m[0] + sd * gauss(), m[1] + sd * gauss()])
        .collect();
    let post = intent_posterior(&[0.5, 0.5], &[&straight, &offset], &prefix).expect("posterior");
    let ok = post[0] >= 0.99;
    pass &= ok;
    parts.push(format!("intent posterior {:.6} ({})", post[0], verdict(ok)));

    outcome(pass, parts.join("; "))
}
