//! Planning model of an intersection snapshot and the first-step decisions
//! of the MCC-SSP and first-come-first-serve planners.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::library::ManeuverLibrary;
use super::scenario::{Scenario, ScenarioError, VehicleKind};
use super::vehicle::{encode, AgentState, PairRisk, Phase, VehicleAgent, VehicleState};
use crate::ilp::{plan, MilpBackend, SolveError, SolveOptions, SolveStatus};
use crate::layers::reachable_layers;
use crate::model::{InteractionPoint, MccSspInstance, NoRisk, RiskModel};
use crate::oracle::{fcfs_plan, OracleError};
use crate::risk::{execution_risk, Policy};

/// Mean distance between two candidate tubes at which a human driver's
/// route counts as revealed, in metres.
pub const COMMIT_SEPARATION: f64 = 1.0;

/// Budget slack over the committed risk when the budget cannot be met.
const COMMITTED_SLACK: f64 = 1e-12;

/// Vehicles at the stop positions and in the box at a planning instant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time_s: f64,
    pub vehicles: Vec<VehicleState>,
    /// Per vehicle: whether a waiting human driver enters at this step.
    pub hv_drives: Vec<bool>,
    /// Mean priority of the vehicles on each scenario lane.
    pub lane_priority: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum IntersectionError {
    #[error("vehicle {0} refers to an unknown maneuver or route")]
    UnknownManeuver(u64),
    #[error("vehicle {0} refers to an unknown lane")]
    UnknownLane(u64),
    #[error("vehicle {0} has already departed")]
    Departed(u64),
    #[error("snapshot lists {vehicles} vehicles but {flags} human-driver flags")]
    FlagCount { vehicles: usize, flags: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Planning instance of a snapshot. Agent `n` is `snapshot.vehicles[n]`.
#[derive(Clone, Debug)]
pub struct IntersectionInstance {
    pub instance: MccSspInstance,
    pub vehicle_ids: Vec<u64>,
    /// Maneuver started by each action of each agent.
    pub actions: Vec<Vec<Option<usize>>>,
    /// Agents with a choice: automated vehicles at a stop position.
    pub controllable: Vec<bool>,
    /// Controllable agents by arrival time, then lane.
    pub arrival_order: Vec<usize>,
}

/// The planner's belief over the routes of a human driver on a lane with
/// `routes`, having reached tube index `index`: uniform at the stop
/// position, then shifting linearly to the true route until the tubes are
/// [`COMMIT_SEPARATION`] apart.
pub fn intent_belief(
    library: &ManeuverLibrary,
    routes: &[usize],
    true_route: usize,
    index: usize,
) -> Vec<(usize, f64)> {
    let n = routes.len();
    if n <= 1 || !routes.contains(&true_route) {
        return vec![(true_route, 1.0)];
    }
    let tube = |r: usize| &library.maneuvers[library.maneuver(r, 0)].tube;
    let own = tube(true_route);
    let commit = routes
        .iter()
        .filter(|&&r| r != true_route)
        .map(|&r| {
            let other = tube(r);
            let len = own.len().min(other.len());
            (0..len)
                .find(|&t| crate::pft::dist(own.means[t], other.means[t]) > COMMIT_SEPARATION)
                .unwrap_or(len)
        })
        .max()
        .unwrap_or(1)
        .max(1);
    let f = (index as f64 / commit as f64).min(1.0);
    let share = 1.0 / n as f64;
    let q = share + (1.0 - share) * f;
    routes
        .iter()
        .map(|&r| {
            (
                r,
                if r == true_route {
                    q
                } else {
                    (1.0 - q) / (n - 1) as f64
                },
            )
        })
        .filter(|&(_, p)| p > 0.0)
        .collect()
}

/// Builds the planning instance of a snapshot.
///
/// Automated vehicles at the stop position choose between waiting and each
/// speed variant of their route. Vehicles in the box continue their
/// maneuver. Human drivers have a single action: they either hold or, when
/// `hv_drives` says so, enter along one of their lane's routes with the
/// intent belief. Every pair of vehicles whose routes can conflict forms an
/// interaction point.
pub fn build_intersection_instance(
    library: &Arc<ManeuverLibrary>,
    scenario: &Scenario,
    snapshot: &Snapshot,
) -> Result<IntersectionInstance, IntersectionError> {
    let vehicles = &snapshot.vehicles;
    if snapshot.hv_drives.len() != vehicles.len() {
        return Err(IntersectionError::FlagCount {
            vehicles: vehicles.len(),
            flags: snapshot.hv_drives.len(),
        });
    }
    let step = scenario.horizon_duration;
    let max_wait_steps = libm::floor(scenario.max_wait_s / step) as u32;
    let nv = library.num_variants();
    let mut inst = MccSspInstance::new(scenario.horizon, vec![scenario.delta]);
    let mut actions_of = Vec::with_capacity(vehicles.len());
    let mut routes_of: Vec<Vec<usize>> = Vec::with_capacity(vehicles.len());
    let mut rests = Vec::with_capacity(vehicles.len());
    let mut controllable = Vec::with_capacity(vehicles.len());

    for (n, v) in vehicles.iter().enumerate() {
        if v.route >= library.routes.len() {
            return Err(IntersectionError::UnknownManeuver(v.id));
        }
        let lane = scenario
            .lanes
            .get(v.lane)
            .ok_or(IntersectionError::UnknownLane(v.id))?;
        let lane_routes: Vec<usize> = lane
            .turns
            .iter()
            .filter_map(|&t| library.route_index(lane.approach, lane.lane, t))
            .collect();
        let waited = libm::floor(v.waited_s.min(scenario.max_wait_s) / step + 1e-9) as u32;
        let rest = library.maneuver(v.route, 0);
        let mut actions = vec![None];
        let mut branches = Vec::new();
        let mut drives = false;
        let mut routes = vec![v.route];
        let initial = match (v.phase, v.kind) {
            (Phase::Departed, _) => return Err(IntersectionError::Departed(v.id)),
            (Phase::Waiting, VehicleKind::Av) => {
                actions.extend((0..nv).map(|k| Some(library.maneuver(v.route, k))));
                AgentState::Waiting { steps: waited }
            }
            (Phase::Waiting, VehicleKind::Hv) => {
                if snapshot.hv_drives[n] {
                    drives = true;
                    let belief = intent_belief(library, &lane_routes, v.route, 0);
                    routes = belief.iter().map(|&(r, _)| r).collect();
                    branches = belief
                        .into_iter()
                        .map(|(r, q)| (library.maneuver(r, 0), q))
                        .collect();
                }
                AgentState::Waiting { steps: waited }
            }
            (Phase::Executing { maneuver, progress }, kind) => {
                if maneuver >= library.maneuvers.len() || progress > library.max_progress(maneuver)
                {
                    return Err(IntersectionError::UnknownManeuver(v.id));
                }
                routes = vec![library.maneuvers[maneuver].route];
                if kind == VehicleKind::Hv && lane_routes.len() > 1 {
                    let index = library.position_index(maneuver, progress);
                    let belief = intent_belief(
                        library,
                        &lane_routes,
                        library.maneuvers[maneuver].route,
                        index,
                    );
                    if belief.len() > 1 {
                        let variant = library.maneuvers[maneuver].variant;
                        routes = belief.iter().map(|&(r, _)| r).collect();
                        branches = belief
                            .into_iter()
                            .map(|(r, q)| (library.maneuver(r, variant), q))
                            .collect();
                    }
                }
                if branches.is_empty() {
                    AgentState::Executing { maneuver, progress }
                } else {
                    AgentState::Ambiguous { progress }
                }
            }
        };
        controllable.push(v.kind == VehicleKind::Av && v.phase == Phase::Waiting);
        let agent = VehicleAgent {
            library: library.clone(),
            kind: v.kind,
            actions: actions.clone(),
            initial: encode(initial, true),
            rest,
            branches,
            drives,
            waited0: waited,
            max_wait_steps,
            step_s: step,
            weights: scenario.weights,
            priority: v.priority as f64,
            lane_priority: snapshot.lane_priority.get(v.lane).copied().unwrap_or(0.0),
            step_discount: scenario.step_discount,
        };
        inst.add_agent(alloc::format!("v{}", v.id), Arc::new(agent));
        actions_of.push(actions);
        routes_of.push(routes);
        rests.push(rest);
    }

    let mut covered = vec![false; vehicles.len()];
    for a in 0..vehicles.len() {
        for b in a + 1..vehicles.len() {
            let conflict = routes_of[a].iter().any(|&ra| {
                routes_of[b]
                    .iter()
                    .any(|&rb| library.routes_conflict(ra, rb))
            });
            if conflict {
                let risk: Arc<dyn RiskModel> = Arc::new(PairRisk {
                    library: library.clone(),
                    rest: [rests[a], rests[b]],
                });
                inst.add_interaction(InteractionPoint::new(vec![a, b], vec![risk]));
                covered[a] = true;
                covered[b] = true;
            }
        }
    }
    for (a, c) in covered.iter().enumerate() {
        if !c {
            inst.add_interaction(InteractionPoint::new(vec![a], vec![Arc::new(NoRisk)]));
        }
    }
    inst.assign_default_utility_owners();

    let mut arrival_order: Vec<usize> = (0..vehicles.len()).filter(|&n| controllable[n]).collect();
    arrival_order.sort_by(|&x, &y| {
        vehicles[x]
            .arrival_s
            .partial_cmp(&vehicles[y].arrival_s)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(vehicles[x].lane.cmp(&vehicles[y].lane))
    });

    Ok(IntersectionInstance {
        instance: inst,
        vehicle_ids: vehicles.iter().map(|v| v.id).collect(),
        actions: actions_of,
        controllable,
        arrival_order,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    MccSsp,
    Fcfs,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::MccSsp => "mccssp",
            PlannerKind::Fcfs => "fcfs",
        }
    }
}

/// First-step decisions for a snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    /// `(vehicle id, maneuver)` for every automated vehicle told to go.
    pub starts: Vec<(u64, usize)>,
    /// `None` when the plan met the budget; otherwise the status of the
    /// failed attempt, after which only entries adding no risk are allowed.
    pub fallback: Option<SolveStatus>,
    /// Execution risk of the plan used.
    pub planned_risk: f64,
}

fn first_step_starts(
    ii: &IntersectionInstance,
    policy: &Policy,
    space: &crate::layers::LayeredSpace,
) -> Vec<(u64, usize)> {
    let mut starts = Vec::new();
    for (v, &ctl) in ii.controllable.iter().enumerate() {
        if !ctl {
            continue;
        }
        let i = ii.instance.interactions_of(v)[0];
        let il = &space.interactions[i];
        let pos = il.members.iter().position(|&m| m == v).expect("member");
        if let Some(ja) = policy.action(i, 0, 0) {
            if let Some(m) = ii.actions[v][il.codec.component(ja, pos)] {
                starts.push((ii.vehicle_ids[v], m));
            }
        }
    }
    starts
}

/// Plans a snapshot and returns the decisions for its first step. When the
/// vehicles in the box alone exceed the budget, the MCC-SSP model is solved
/// again with the budget raised to their committed risk, so that only
/// entries adding no risk are made.
pub fn plan_snapshot(
    library: &Arc<ManeuverLibrary>,
    scenario: &Scenario,
    snapshot: &Snapshot,
    planner: PlannerKind,
    backend: &mut dyn MilpBackend,
    options: &SolveOptions,
) -> Result<PlanOutcome, IntersectionError> {
    let ii = build_intersection_instance(library, scenario, snapshot)?;
    match planner {
        PlannerKind::MccSsp => {
            let (space, result) = plan(&ii.instance, backend, options)?;
            match (result.status, &result.policy) {
                (SolveStatus::Optimal | SolveStatus::TimeLimit, Some(policy)) => Ok(PlanOutcome {
                    starts: first_step_starts(&ii, policy, &space),
                    fallback: None,
                    planned_risk: result.risks.first().copied().unwrap_or(0.0),
                }),
                (status, _) => {
                    // Risk already committed by the vehicles in the box
                    // exceeds the budget: admit only entries adding none.
                    let wait = crate::ilp::default_policy(&space);
                    let committed = execution_risk(&space, &wait, 0).map_err(SolveError::from)?;
                    let mut relaxed = ii.instance.clone();
                    relaxed.risk_budgets = vec![committed + COMMITTED_SLACK];
                    let (space, result) = plan(&relaxed, backend, options)?;
                    let starts = match (result.status, &result.policy) {
                        (SolveStatus::Optimal | SolveStatus::TimeLimit, Some(policy)) => {
                            first_step_starts(&ii, policy, &space)
                        }
                        _ => Vec::new(),
                    };
                    let planned_risk = if starts.is_empty() {
                        committed
                    } else {
                        result.risks.first().copied().unwrap_or(committed)
                    };
                    Ok(PlanOutcome {
                        starts,
                        fallback: Some(status),
                        planned_risk,
                    })
                }
            }
        }
        PlannerKind::Fcfs => {
            let space = reachable_layers(&ii.instance);
            let policy = fcfs_plan(&ii.instance, &space, &ii.arrival_order, scenario.delta)?;
            Ok(PlanOutcome {
                starts: first_step_starts(&ii, &policy, &space),
                fallback: None,
                planned_risk: execution_risk(&space, &policy, 0).map_err(SolveError::from)?,
            })
        }
    }
}
