use std::sync::{Arc, OnceLock};

use mccssp::backend::HighsBackend;
use mccssp::core::ilp::{SolveOptions, SolveStatus};
use mccssp::core::intersection::layout::{Approach, Turn};
use mccssp::core::intersection::library::{ManeuverLibrary, PairTables};
use mccssp::core::intersection::planner::{
    build_intersection_instance, plan_snapshot, PlannerKind, Snapshot,
};
use mccssp::core::intersection::scenario::{Scenario, VehicleKind};
use mccssp::core::intersection::vehicle::{Phase, VehicleState};
use mccssp::core::layers::reachable_layers;
use mccssp::core::oracle::brute_force_optimal;
use mccssp::core::pft::RiskTable;

fn scenario() -> Scenario {
    Scenario {
        speeds: vec![6.0],
        trajectories_per_tube: 12,
        risk_samples: 200,
        ..Scenario::default()
    }
}

fn library() -> &'static ManeuverLibrary {
    static LIB: OnceLock<ManeuverLibrary> = OnceLock::new();
    LIB.get_or_init(|| ManeuverLibrary::build(&scenario()).unwrap())
}

fn lane_of(s: &Scenario, approach: Approach, lane: usize) -> usize {
    s.lanes
        .iter()
        .position(|l| l.approach == approach && l.lane == lane)
        .unwrap()
}

fn waiting(
    id: u64,
    s: &Scenario,
    lib: &ManeuverLibrary,
    approach: Approach,
    lane: usize,
    turn: Turn,
    kind: VehicleKind,
) -> VehicleState {
    VehicleState {
        id,
        kind,
        lane: lane_of(s, approach, lane),
        route: lib.route_index(approach, lane, turn).unwrap(),
        phase: Phase::Waiting,
        waited_s: 0.0,
        priority: 5,
        arrival_s: id as f64,
        started_s: None,
    }
}

/// Risk `value` whenever both maneuvers are under way, zero otherwise.
fn moving_table(lib: &ManeuverLibrary, a: usize, b: usize, value: f64) -> PairTables {
    let (a, b) = (a.min(b), a.max(b));
    let axes = vec![
        lib.maneuvers[a].axis(lib.stride),
        lib.maneuvers[b].axis(lib.stride),
    ];
    let (na, nb) = (axes[0].size(), axes[1].size());
    let values: Vec<f64> = (0..na * nb)
        .map(|k| {
            if k / nb >= 1 && k % nb >= 1 {
                value
            } else {
                0.0
            }
        })
        .collect();
    let table = RiskTable {
        maneuvers: vec![
            lib.maneuvers[a].label.clone(),
            lib.maneuvers[b].label.clone(),
        ],
        axes,
        window: lib.window,
        seed: 0,
        samples: 0,
        values,
    };
    PairTables {
        a,
        b,
        plan: table.clone(),
        step: table,
    }
}

fn snapshot(s: &Scenario, vehicles: Vec<VehicleState>, hv_drives: Vec<bool>) -> Snapshot {
    Snapshot {
        time_s: 0.0,
        vehicles,
        hv_drives,
        lane_priority: vec![5.0; s.lanes.len()],
    }
}

#[test]
fn lone_vehicle_enters_an_empty_intersection() {
    let s = scenario();
    let lib = Arc::new(library().clone());
    let v = waiting(1, &s, &lib, Approach::South, 0, Turn::Left, VehicleKind::Av);
    let route = v.route;
    let out = plan_snapshot(
        &lib,
        &s,
        &snapshot(&s, vec![v], vec![false]),
        PlannerKind::MccSsp,
        &mut HighsBackend,
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(out.fallback, None);
    assert_eq!(out.starts, vec![(1, lib.maneuver(route, 0))]);
    assert_eq!(out.planned_risk, 0.0);
}

#[test]
fn human_intent_mixture_weights_branch_risk() {
    let mut s = scenario();
    let mut lib = library().clone();
    lib.clear_pairs();
    let hv = waiting(
        1,
        &s,
        &lib,
        Approach::South,
        0,
        Turn::Straight,
        VehicleKind::Hv,
    );
    let av = waiting(
        2,
        &s,
        &lib,
        Approach::East,
        0,
        Turn::Straight,
        VehicleKind::Av,
    );
    let hv_left = lib.maneuver(lib.route_index(Approach::South, 0, Turn::Left).unwrap(), 0);
    let av_m = lib.maneuver(av.route, 0);
    lib.insert_pair(moving_table(&lib, hv_left, av_m, 0.3));
    let lib = Arc::new(lib);

    s.delta = 0.2;
    let snap = snapshot(&s, vec![hv.clone(), av.clone()], vec![true, false]);
    let out = plan_snapshot(
        &lib,
        &s,
        &snap,
        PlannerKind::MccSsp,
        &mut HighsBackend,
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(out.starts, vec![(2, av_m)]);
    assert!(
        (out.planned_risk - 0.15).abs() < 1e-12,
        "{}",
        out.planned_risk
    );

    s.delta = 0.1;
    let out = plan_snapshot(
        &lib,
        &s,
        &snap,
        PlannerKind::MccSsp,
        &mut HighsBackend,
        &SolveOptions::default(),
    )
    .unwrap();
    assert!(out.starts.is_empty());
    assert_eq!(out.planned_risk, 0.0);

    // A holding human driver poses no risk.
    let snap = snapshot(&s, vec![hv, av], vec![false, false]);
    let out = plan_snapshot(
        &lib,
        &s,
        &snap,
        PlannerKind::MccSsp,
        &mut HighsBackend,
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(out.starts, vec![(2, av_m)]);
}

#[test]
fn budget_admits_one_of_two_conflicting_vehicles() {
    let mut s = scenario();
    s.delta = 0.1;
    let mut lib = library().clone();
    lib.clear_pairs();
    let a = waiting(1, &s, &lib, Approach::South, 0, Turn::Left, VehicleKind::Av);
    let b = waiting(
        2,
        &s,
        &lib,
        Approach::North,
        0,
        Turn::Straight,
        VehicleKind::Av,
    );
    let (ma, mb) = (lib.maneuver(a.route, 0), lib.maneuver(b.route, 0));
    lib.insert_pair(moving_table(&lib, ma, mb, 0.15));
    let lib = Arc::new(lib);
    let snap = snapshot(&s, vec![a, b], vec![false, false]);

    let out = plan_snapshot(
        &lib,
        &s,
        &snap,
        PlannerKind::MccSsp,
        &mut HighsBackend,
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(out.starts.len(), 1);
    assert_eq!(out.planned_risk, 0.0);

    let ii = build_intersection_instance(&lib, &s, &snap).unwrap();
    let space = reachable_layers(&ii.instance);
    let bf = brute_force_optimal(&ii.instance, &space, 1_000_000).unwrap();
    let (_, result) =
        mccssp::core::ilp::plan(&ii.instance, &mut HighsBackend, &SolveOptions::default()).unwrap();
    assert_eq!(result.status, SolveStatus::Optimal);
    assert!(
        (result.utility - bf.objective).abs() < 1e-6,
        "{} vs {}",
        result.utility,
        bf.objective
    );

    let fcfs = plan_snapshot(
        &lib,
        &s,
        &snap,
        PlannerKind::Fcfs,
        &mut HighsBackend,
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(fcfs.starts, vec![(1, ma)]);
}

#[test]
fn executing_human_driver_is_ambiguous_until_committed() {
    let lib = library();
    let routes: Vec<usize> = [Turn::Left, Turn::Straight]
        .iter()
        .map(|&t| lib.route_index(Approach::South, 0, t).unwrap())
        .collect();
    let entry = mccssp::core::intersection::planner::intent_belief(lib, &routes, routes[0], 0);
    assert_eq!(entry, vec![(routes[0], 0.5), (routes[1], 0.5)]);
    let late = mccssp::core::intersection::planner::intent_belief(
        lib,
        &routes,
        routes[0],
        lib.maneuvers[lib.maneuver(routes[0], 0)].tube.len(),
    );
    assert_eq!(late, vec![(routes[0], 1.0)]);
}
