//! Batch experiments: grid benchmark, intersection sweeps and the self-test
//! suites, parallelized with rayon.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use mccssp_core::grid::{generate_grid_instance, GridError, GridSpec};
use mccssp_core::ilp::{build_ilp, solve, IlpError, SolveError, SolveOptions, SolveStatus};
use mccssp_core::intersection::library::{LibraryBuilder, ManeuverLibrary};
use mccssp_core::intersection::planner::{plan_snapshot, IntersectionError, PlannerKind, Snapshot};
use mccssp_core::intersection::scenario::{Scenario, ScenarioError, VehicleKind};
use mccssp_core::intersection::sim::{Clock, Metrics, Simulation};
use mccssp_core::intersection::vehicle::{Phase, VehicleState};
use mccssp_core::layers::{reachable_layers, LayeredSpace};
use mccssp_core::model::{InteractionPoint, JointRiskTable, MccSspInstance, TabularMdp};
use mccssp_core::oracle::{brute_force_optimal, DEFAULT_POLICY_CAP};
use mccssp_core::pft::Pft;
use mccssp_core::random::{random_instance, RandomSpec};
use mccssp_core::risk::{execution_risk, linear_risk_form, occupancy_flows, Policy};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::backend::{backend_by_name, timed};

/// Wall-clock seconds since construction.
#[derive(Clone, Copy, Debug)]
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        SystemClock(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_s(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool for 0.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Builds the maneuver library, computing collision matrices in parallel.
pub fn build_library(
    scenario: &Scenario,
    tubes: &BTreeMap<String, Pft>,
) -> Result<ManeuverLibrary, ScenarioError> {
    let builder = LibraryBuilder::new(scenario, tubes)?;
    let matrices = (0..builder.jobs().len())
        .into_par_iter()
        .map(|j| builder.compute(j))
        .collect();
    Ok(builder.finish(matrices))
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Ilp(#[from] IlpError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Intersection(#[from] IntersectionError),
}

// ------------------------------------------------------------- grid bench

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridBenchRow {
    pub n_agents: usize,
    pub horizon: usize,
    pub build_s: f64,
    pub solve_s: f64,
    pub objective: f64,
    pub risk: f64,
    pub status: SolveStatus,
}

/// Builds and solves one grid instance. Times are the minimum over
/// `repeats` runs.
pub fn grid_bench_row(
    spec: &GridSpec,
    solver: &str,
    options: &SolveOptions,
    repeats: usize,
) -> Result<GridBenchRow, ExperimentError> {
    let inst = generate_grid_instance(spec)?;
    let mut backend = backend_by_name(solver).map_err(SolveError::from)?;
    let mut best_build = f64::INFINITY;
    let mut best_solve = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let ((space, model), build_s) = timed(|| {
            let space = reachable_layers(&inst);
            let model = build_ilp(&inst, &space);
            (space, model)
        });
        let model = model?;
        let (result, solve_s) = timed(|| solve(&space, &model, backend.as_mut(), options));
        best_build = best_build.min(build_s);
        best_solve = best_solve.min(solve_s);
        last = Some(result?);
    }
    let result = last.expect("at least one run");
    Ok(GridBenchRow {
        n_agents: spec.n_agents,
        horizon: spec.horizon,
        build_s: best_build,
        solve_s: best_solve,
        objective: result.utility,
        risk: result.risks.first().copied().unwrap_or(0.0),
        status: result.status,
    })
}

/// One row per `(agents, horizon)` pair, agents varying slowest.
pub fn grid_bench(
    base: &GridSpec,
    agents: &[usize],
    horizons: &[usize],
    solver: &str,
    options: &SolveOptions,
    repeats: usize,
) -> Result<Vec<GridBenchRow>, ExperimentError> {
    let cells: Vec<(usize, usize)> = agents
        .iter()
        .flat_map(|&n| horizons.iter().map(move |&h| (n, h)))
        .collect();
    cells
        .par_iter()
        .map(|&(n_agents, horizon)| {
            let spec = GridSpec {
                n_agents,
                horizon,
                ..base.clone()
            };
            grid_bench_row(&spec, solver, options, repeats)
        })
        .collect()
}

// ------------------------------------------------------ intersection sweep

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub planners: Vec<PlannerKind>,
    pub deltas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub hv_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub duration_s: f64,
}

/// Simulates every combination of the configuration, in the order planner,
/// Δ, h, HV fraction, seed.
pub fn intersection_sweep(
    scenario: &Scenario,
    library: &Arc<ManeuverLibrary>,
    config: &SweepConfig,
    solver: &str,
    options: &SolveOptions,
) -> Result<Vec<Metrics>, ExperimentError> {
    let mut cells = Vec::new();
    for &planner in &config.planners {
        for &delta in &config.deltas {
            for &horizon in &config.horizons {
                for &hv in &config.hv_fractions {
                    for &seed in &config.seeds {
                        cells.push((planner, delta, horizon, hv, seed));
                    }
                }
            }
        }
    }
    cells
        .par_iter()
        .map(|&(planner, delta, horizon, hv_fraction, seed)| {
            let s = Scenario {
                delta,
                horizon,
                hv_fraction,
                ..scenario.clone()
            };
            let mut backend = backend_by_name(solver).map_err(SolveError::from)?;
            let mut sim = Simulation::new(&s, library.clone(), planner, seed)?;
            Ok(sim.run(
                config.duration_s,
                backend.as_mut(),
                options,
                &SystemClock::new(),
            )?)
        })
        .collect()
}

/// Placement attempts per executing vehicle of [`random_snapshot`].
const PLACEMENT_TRIES: usize = 1000;

/// A random snapshot: one automated vehicle waiting at every lane's stop
/// position and up to `executing` automated vehicles at random points of
/// random maneuvers, placed so that no pair of vehicles carries collision
/// risk.
pub fn random_snapshot(
    scenario: &Scenario,
    library: &ManeuverLibrary,
    executing: usize,
    seed: u64,
) -> Result<Snapshot, IntersectionError> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let lanes = &scenario.lanes;
    let mut vehicles = Vec::with_capacity(lanes.len() + executing);
    let mut placed: Vec<(usize, usize)> = Vec::with_capacity(lanes.len() + executing);
    let draw_route = |rng: &mut rand_chacha::ChaCha8Rng, lane: usize| {
        let spec = &lanes[lane];
        let turn = spec.turns[rng.random_range(0..spec.turns.len())];
        library
            .route_index(spec.approach, spec.lane, turn)
            .ok_or(IntersectionError::UnknownLane(lane as u64))
    };
    for lane in 0..lanes.len() {
        let route = draw_route(&mut rng, lane)?;
        placed.push((library.maneuver(route, 0), 0));
        vehicles.push((lane, route, Phase::Waiting));
    }
    for _ in 0..executing {
        for _ in 0..PLACEMENT_TRIES {
            let lane = rng.random_range(0..lanes.len());
            let route = draw_route(&mut rng, lane)?;
            let maneuver = library.maneuver(route, rng.random_range(0..library.num_variants()));
            let progress = rng.random_range(1..=library.max_progress(maneuver));
            if placed
                .iter()
                .all(|&(m, p)| library.plan_risk(maneuver, progress, m, p) == 0.0)
            {
                placed.push((maneuver, progress));
                vehicles.push((lane, route, Phase::Executing { maneuver, progress }));
                break;
            }
        }
    }
    let vehicles: Vec<VehicleState> = vehicles
        .into_iter()
        .enumerate()
        .map(|(n, (lane, route, phase))| VehicleState {
            id: n as u64,
            kind: VehicleKind::Av,
            lane,
            route,
            phase,
            waited_s: rng.random_range(0.0..30.0),
            priority: rng.random_range(scenario.priority_range.0..=scenario.priority_range.1),
            arrival_s: 0.0,
            started_s: None,
        })
        .collect();
    Ok(Snapshot {
        time_s: 0.0,
        hv_drives: vec![false; vehicles.len()],
        lane_priority: vec![0.0; lanes.len()],
        vehicles,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanTimeRow {
    pub horizon: usize,
    pub vehicles: usize,
    pub snapshots: usize,
    pub mean_plan_s: f64,
    pub max_plan_s: f64,
    pub fallbacks: usize,
}

/// MCC-SSP planning time over the random snapshots of `seeds`, one row per
/// horizon. Runs sequentially so that timings do not compete.
pub fn plan_time(
    scenario: &Scenario,
    library: &Arc<ManeuverLibrary>,
    horizons: &[usize],
    executing: usize,
    seeds: std::ops::Range<u64>,
    solver: &str,
    options: &SolveOptions,
) -> Result<Vec<PlanTimeRow>, ExperimentError> {
    let mut backend = backend_by_name(solver).map_err(SolveError::from)?;
    let snapshots = seeds
        .map(|seed| random_snapshot(scenario, library, executing, seed))
        .collect::<Result<Vec<_>, _>>()?;
    horizons
        .iter()
        .map(|&horizon| {
            let s = Scenario {
                horizon,
                ..scenario.clone()
            };
            let mut times = Vec::with_capacity(snapshots.len());
            let mut fallbacks = 0;
            for snapshot in &snapshots {
                let (outcome, t) = timed(|| {
                    plan_snapshot(
                        library,
                        &s,
                        snapshot,
                        PlannerKind::MccSsp,
                        backend.as_mut(),
                        options,
                    )
                });
                fallbacks += usize::from(outcome?.fallback.is_some());
                times.push(t);
            }
            Ok(PlanTimeRow {
                horizon,
                vehicles: snapshots.first().map_or(0, |s| s.vehicles.len()),
                snapshots: times.len(),
                mean_plan_s: times.iter().sum::<f64>() / times.len().max(1) as f64,
                max_plan_s: times.iter().copied().fold(0.0, f64::max),
                fallbacks,
            })
        })
        .collect()
}

// ------------------------------------------------------------- self-tests

/// Outcome of one self-test suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Optimal ILP objectives against exhaustive search over deterministic
/// policies on random small instances.
pub fn oracle_equivalence_suite(seeds: std::ops::Range<u64>, solver: &str) -> SuiteReport {
    let spec = RandomSpec::default();
    let options = SolveOptions::default();
    let check = |seed: u64| -> Result<(), String> {
        let inst = random_instance(seed, &spec);
        let mut backend = backend_by_name(solver).map_err(|e| e.to_string())?;
        let (space, result) =
            mccssp_core::ilp::plan(&inst, backend.as_mut(), &options).map_err(|e| e.to_string())?;
        let bf =
            brute_force_optimal(&inst, &space, DEFAULT_POLICY_CAP).map_err(|e| e.to_string())?;
        match (result.status, bf.is_feasible()) {
            (SolveStatus::Optimal, true) => {
                if (result.utility - bf.objective).abs() > 1e-6 {
                    return Err(format!(
                        "seed {seed}: objective {} vs search {}",
                        result.utility, bf.objective
                    ));
                }
                for (j, (&r, &d)) in result.risks.iter().zip(&inst.risk_budgets).enumerate() {
                    if r > d + 1e-9 {
                        return Err(format!("seed {seed}: criterion {j} risk {r} exceeds {d}"));
                    }
                }
                Ok(())
            }
            (SolveStatus::Infeasible | SolveStatus::BudgetExhausted, false) => Ok(()),
            (status, feasible) => Err(format!(
                "seed {seed}: solver {status:?}, search feasible {feasible}"
            )),
        }
    };
    let failures: Vec<String> = seeds
        .clone()
        .into_par_iter()
        .filter_map(|s| check(s).err())
        .collect();
    SuiteReport {
        name: "oracle equivalence".into(),
        cases: seeds.count(),
        failures,
    }
}

/// Draws a stochastic policy with random weights on every available joint
/// action.
pub fn random_stochastic_policy(space: &LayeredSpace, seed: u64) -> Policy {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
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

/// Linear risk form of random flows against the execution-risk recursion.
pub fn risk_identity_suite(seeds: std::ops::Range<u64>) -> SuiteReport {
    let spec = RandomSpec::default();
    let check = |seed: u64| -> Result<(), String> {
        let inst = random_instance(seed, &spec);
        let space = reachable_layers(&inst);
        let policy = random_stochastic_policy(&space, seed ^ 0x5eed);
        for j in 0..space.num_criteria {
            let flows = occupancy_flows(&space, &policy, Some(j)).map_err(|e| e.to_string())?;
            let linear = linear_risk_form(&space, &flows, j);
            let er = execution_risk(&space, &policy, j).map_err(|e| e.to_string())?;
            if (linear - er).abs() > 1e-9 {
                return Err(format!("seed {seed}: linear {linear} vs recursion {er}"));
            }
        }
        Ok(())
    };
    let failures: Vec<String> = seeds
        .clone()
        .into_par_iter()
        .filter_map(|s| check(s).err())
        .collect();
    SuiteReport {
        name: "risk identity".into(),
        cases: seeds.count(),
        failures,
    }
}

/// A chain of `steps + 1` states whose every state after the first fails
/// with probability `risk`.
pub fn risky_chain(steps: usize, risk: f64) -> MccSspInstance {
    let mut inst = MccSspInstance::new(steps, vec![1.0]);
    let a = inst.add_agent("chain", Arc::new(TabularMdp::chain(steps + 1, 1.0)));
    let mut table = JointRiskTable::default();
    for s in 1..=steps as u64 {
        table.entries.insert(vec![s], risk);
    }
    inst.add_interaction(InteractionPoint::new(vec![a], vec![Arc::new(table)]));
    inst.assign_default_utility_owners();
    inst
}

/// Closed-form chain risk through the recursion and the linear form.
pub fn chain_suite() -> SuiteReport {
    let inst = risky_chain(3, 0.1);
    let space = reachable_layers(&inst);
    let policy = mccssp_core::ilp::default_policy(&space);
    let expected = 1.0 - 0.9f64.powi(3);
    let mut failures = Vec::new();
    match (
        execution_risk(&space, &policy, 0),
        occupancy_flows(&space, &policy, Some(0)),
    ) {
        (Ok(er), Ok(flows)) => {
            let linear = linear_risk_form(&space, &flows, 0);
            for (name, v) in [("recursion", er), ("linear form", linear)] {
                if (v - expected).abs() > 1e-12 {
                    failures.push(format!("{name}: {v} vs {expected}"));
                }
            }
        }
        (a, b) => failures.push(format!("evaluation failed: {a:?} {:?}", b.err())),
    }
    SuiteReport {
        name: "chain".into(),
        cases: 1,
        failures,
    }
}

/// The self-test suites run by the command line.
pub fn selftest(solver: &str) -> Vec<SuiteReport> {
    vec![
        oracle_equivalence_suite(0..200, solver),
        risk_identity_suite(0..100),
        chain_suite(),
    ]
}
