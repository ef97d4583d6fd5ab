//! Discrete-time simulation of the intersection under a planner.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::layout::Approach;
use super::library::ManeuverLibrary;
use super::planner::{plan_snapshot, IntersectionError, PlannerKind, Snapshot};
use super::scenario::{Arrival, Scenario, VehicleKind};
use super::vehicle::{Phase, VehicleState};
use crate::ilp::{MilpBackend, SolveOptions, SolveStatus};
use crate::seed;

const TAG_ARRIVAL: u64 = 21;
const TAG_COLLISION: u64 = 22;
const TAG_DEVIATION: u64 = 23;
/// Queue length kept on saturated lanes.
const SATURATED_QUEUE: usize = 2;

/// Wall-clock source for plan timing.
pub trait Clock {
    fn now_s(&self) -> f64;
}

/// A clock that never advances.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_s(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub seed: u64,
    pub planner: PlannerKind,
    pub delta: f64,
    pub horizon: usize,
    pub hv_fraction: f64,
    /// Departed vehicles per minute.
    pub throughput_vpm: f64,
    /// Longest time from arrival to entering, counting vehicles still queued
    /// at the end.
    pub max_wait_s: f64,
    /// Steps with at least one collision.
    pub collisions: usize,
    pub collision_rate: f64,
    pub mean_plan_s: f64,
    pub duration_s: f64,
    pub steps: usize,
    pub arrived: usize,
    pub departed: usize,
    /// Mean time from arrival to entering over vehicles that entered.
    pub mean_wait_s: f64,
    pub plans: usize,
    /// Plans whose budget could not be met by any policy.
    pub fallbacks: usize,
    pub max_plan_s: f64,
    pub max_planned_risk: f64,
    /// Steps during which entries were blocked by a halt.
    pub halted_steps: usize,
}

/// What happened during one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub time_s: f64,
    /// `(vehicle id, maneuver)` of every vehicle that entered.
    pub entered: Vec<(u64, usize)>,
    pub collision: bool,
    /// `None` when no automated vehicle had a choice.
    pub planned_risk: Option<f64>,
    pub fallback: Option<SolveStatus>,
}

/// Approach with a green light at `time_s`.
pub fn green_approach(signal_period: f64, time_s: f64) -> Approach {
    let phase = libm::floor(time_s / signal_period) as u64 % 4;
    Approach::ALL[phase as usize]
}

#[derive(Clone, Debug)]
pub struct Simulation {
    scenario: Scenario,
    library: Arc<ManeuverLibrary>,
    planner: PlannerKind,
    seed: u64,
    step: usize,
    queues: Vec<VecDeque<VehicleState>>,
    in_box: Vec<VehicleState>,
    last_starter: Vec<Option<u64>>,
    lane_routes: Vec<Vec<usize>>,
    next_id: u64,
    arrived: usize,
    departed: usize,
    waits: Vec<f64>,
    collisions: usize,
    plans: usize,
    fallbacks: usize,
    plan_s: Vec<f64>,
    max_planned_risk: f64,
    /// Set by a human driver's deviation; blocks entries until the box is
    /// empty.
    halted: bool,
    halted_steps: usize,
}

impl Simulation {
    /// Starts a simulation with the scenario's initial vehicles queued.
    /// Initial vehicles get ids `0..`.
    pub fn new(
        scenario: &Scenario,
        library: Arc<ManeuverLibrary>,
        planner: PlannerKind,
        seed: u64,
    ) -> Result<Self, IntersectionError> {
        scenario.validate()?;
        let lane_routes = scenario
            .lanes
            .iter()
            .map(|l| {
                l.turns
                    .iter()
                    .map(|&t| {
                        library
                            .route_index(l.approach, l.lane, t)
                            .ok_or(IntersectionError::UnknownManeuver(0))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut sim = Simulation {
            scenario: scenario.clone(),
            library,
            planner,
            seed,
            step: 0,
            queues: vec![VecDeque::new(); scenario.lanes.len()],
            in_box: Vec::new(),
            last_starter: vec![None; scenario.lanes.len()],
            lane_routes,
            next_id: 0,
            arrived: 0,
            departed: 0,
            waits: Vec::new(),
            collisions: 0,
            plans: 0,
            fallbacks: 0,
            plan_s: Vec::new(),
            max_planned_risk: 0.0,
            halted: false,
            halted_steps: 0,
        };
        for v in &scenario.initial_vehicles {
            let l = &scenario.lanes[v.lane];
            let route = sim
                .library
                .route_index(l.approach, l.lane, v.turn)
                .ok_or(IntersectionError::UnknownLane(sim.next_id))?;
            sim.push_vehicle(v.lane, route, v.kind, v.priority, 0.0);
        }
        Ok(sim)
    }

    pub fn time_s(&self) -> f64 {
        self.step as f64 * self.scenario.horizon_duration
    }

    pub fn queues(&self) -> &[VecDeque<VehicleState>] {
        &self.queues
    }

    pub fn in_box(&self) -> &[VehicleState] {
        &self.in_box
    }

    fn push_vehicle(&mut self, lane: usize, route: usize, kind: VehicleKind, priority: u8, t: f64) {
        self.queues[lane].push_back(VehicleState {
            id: self.next_id,
            kind,
            lane,
            route,
            phase: Phase::Waiting,
            waited_s: 0.0,
            priority,
            arrival_s: t,
            started_s: None,
        });
        self.next_id += 1;
        self.arrived += 1;
    }

    fn arrivals(&mut self, t: f64) {
        let dt = self.scenario.horizon_duration;
        for lane in 0..self.scenario.lanes.len() {
            let mut rng = seed::rng(seed::derive(
                self.seed,
                &[TAG_ARRIVAL, lane as u64, self.step as u64],
            ));
            let count = match self.scenario.lanes[lane].arrival {
                Arrival::None => 0,
                Arrival::Poisson { rate } => match Poisson::new(rate * dt) {
                    Ok(p) => p.sample(&mut rng) as usize,
                    Err(_) => 0,
                },
                Arrival::Saturated => SATURATED_QUEUE.saturating_sub(self.queues[lane].len()),
            };
            for _ in 0..count {
                let kind = if rng.random::<f64>() < self.scenario.hv_fraction {
                    VehicleKind::Hv
                } else {
                    VehicleKind::Av
                };
                let routes = &self.lane_routes[lane];
                let route = routes[rng.random_range(0..routes.len())];
                let (lo, hi) = self.scenario.priority_range;
                let priority = rng.random_range(lo..=hi);
                self.push_vehicle(lane, route, kind, priority, t);
            }
        }
    }

    /// Whether the head of `lane` can move up to the stop position without
    /// any sampled risk from the previous starter.
    fn head_ready(&self, lane: usize) -> bool {
        let Some(id) = self.last_starter[lane] else {
            return true;
        };
        match self.in_box.iter().find(|v| v.id == id) {
            Some(VehicleState {
                phase: Phase::Executing { maneuver, progress },
                ..
            }) => {
                let m = &self.library.maneuvers[*maneuver];
                let head = &self.queues[lane][0];
                m.arc[self.library.position_index(*maneuver, *progress)] >= self.scenario.queue_gap
                    && self.library.plan_risk(
                        self.library.maneuver(head.route, 0),
                        0,
                        *maneuver,
                        *progress,
                    ) <= 0.0
            }
            _ => true,
        }
    }

    /// Risk to the boxed vehicles if a human driver entered `maneuver` now.
    fn entry_risk(&self, maneuver: usize) -> f64 {
        self.in_box
            .iter()
            .filter_map(|v| match v.phase {
                Phase::Executing {
                    maneuver: m,
                    progress,
                } => self
                    .library
                    .next_progress(m, progress)
                    .map(|q| self.library.plan_risk(maneuver, 1, m, q)),
                _ => None,
            })
            .sum()
    }

    /// Advances the simulation by one planning step.
    pub fn step(
        &mut self,
        backend: &mut dyn MilpBackend,
        options: &SolveOptions,
        clock: &dyn Clock,
    ) -> Result<StepRecord, IntersectionError> {
        let t = self.time_s();
        self.arrivals(t);
        for q in &mut self.queues {
            for v in q.iter_mut() {
                v.waited_s = (t - v.arrival_s).min(self.scenario.max_wait_s);
            }
        }

        if self.halted && self.in_box.is_empty() {
            self.halted = false;
        }
        let heads: Vec<usize> = (0..self.queues.len())
            .filter(|&l| !self.queues[l].is_empty() && self.head_ready(l))
            .collect();
        let green = green_approach(self.scenario.signal_period, t);
        let mut vehicles = self.in_box.clone();
        let mut hv_drives = vec![false; vehicles.len()];
        for &l in &heads {
            let v = self.queues[l][0].clone();
            let drives = v.kind == VehicleKind::Hv
                && !self.halted
                && self.scenario.lanes[l].approach == green
                && self.entry_risk(self.library.maneuver(v.route, 0))
                    <= self.scenario.hv_clear_risk;
            vehicles.push(v);
            hv_drives.push(drives);
        }

        if self.halted {
            self.halted_steps += 1;
        }
        let mut entered: Vec<(u64, usize)> = Vec::new();
        let mut planned_risk = None;
        let mut fallback = None;
        let any_choice = !self.halted
            && vehicles
                .iter()
                .any(|v| v.kind == VehicleKind::Av && v.phase == Phase::Waiting);
        if any_choice {
            let lane_priority = self
                .queues
                .iter()
                .map(|q| {
                    if q.is_empty() {
                        0.0
                    } else {
                        q.iter().map(|v| v.priority as f64).sum::<f64>() / q.len() as f64
                    }
                })
                .collect();
            let snapshot = Snapshot {
                time_s: t,
                vehicles: vehicles.clone(),
                hv_drives: hv_drives.clone(),
                lane_priority,
            };
            let start = clock.now_s();
            let out = plan_snapshot(
                &self.library,
                &self.scenario,
                &snapshot,
                self.planner,
                backend,
                options,
            )?;
            self.plan_s.push(clock.now_s() - start);
            self.plans += 1;
            if out.fallback.is_some() {
                self.fallbacks += 1;
            }
            self.max_planned_risk = self.max_planned_risk.max(out.planned_risk);
            planned_risk = Some(out.planned_risk);
            fallback = out.fallback;
            entered = out.starts;
        }
        for (v, &drives) in vehicles.iter().zip(&hv_drives) {
            if drives {
                entered.push((v.id, self.library.maneuver(v.route, 0)));
            }
        }

        // Vehicles in the box move on.
        let mut dev_rng = seed::rng(seed::derive(self.seed, &[TAG_DEVIATION, self.step as u64]));
        let mut next_box = Vec::with_capacity(self.in_box.len() + entered.len());
        for mut v in core::mem::take(&mut self.in_box) {
            if let Phase::Executing { maneuver, progress } = v.phase {
                if v.kind == VehicleKind::Hv
                    && self.scenario.hv_deviation_prob > 0.0
                    && dev_rng.random::<f64>() < self.scenario.hv_deviation_prob
                {
                    self.halted = true;
                }
                match self.library.next_progress(maneuver, progress) {
                    Some(p) => {
                        v.phase = Phase::Executing {
                            maneuver,
                            progress: p,
                        };
                        next_box.push(v);
                    }
                    None => self.departed += 1,
                }
            }
        }
        for &(id, m) in &entered {
            let lane = heads
                .iter()
                .copied()
                .find(|&l| self.queues[l].front().is_some_and(|v| v.id == id))
                .ok_or(IntersectionError::UnknownManeuver(id))?;
            let mut v = self.queues[lane].pop_front().expect("head");
            v.phase = Phase::Executing {
                maneuver: m,
                progress: 1,
            };
            v.started_s = Some(t);
            self.waits.push(t - v.arrival_s);
            self.last_starter[lane] = Some(id);
            next_box.push(v);
        }
        self.in_box = next_box;

        // Collisions during the step: moving vehicles and those at the stop
        // position.
        let at_stop: Vec<(usize, usize)> = vehicles
            .iter()
            .filter(|v| v.phase == Phase::Waiting && !entered.iter().any(|&(id, _)| id == v.id))
            .map(|v| (self.library.maneuver(v.route, 0), 0))
            .collect();
        let positions: Vec<(usize, usize)> = self
            .in_box
            .iter()
            .filter_map(|v| match v.phase {
                Phase::Executing { maneuver, progress } => Some((maneuver, progress)),
                _ => None,
            })
            .chain(at_stop)
            .collect();
        let mut survive = 1.0;
        for (x, &(a, pa)) in positions.iter().enumerate() {
            for &(b, pb) in &positions[x + 1..] {
                survive *= 1.0 - self.library.step_risk(a, pa, b, pb);
            }
        }
        let mut col_rng = seed::rng(seed::derive(self.seed, &[TAG_COLLISION, self.step as u64]));
        let collision = col_rng.random::<f64>() < 1.0 - survive;
        if collision {
            self.collisions += 1;
        }

        self.step += 1;
        Ok(StepRecord {
            time_s: t,
            entered,
            collision,
            planned_risk,
            fallback,
        })
    }

    /// Steps until `duration_s` seconds have passed and returns the
    /// metrics.
    pub fn run(
        &mut self,
        duration_s: f64,
        backend: &mut dyn MilpBackend,
        options: &SolveOptions,
        clock: &dyn Clock,
    ) -> Result<Metrics, IntersectionError> {
        let steps = libm::round(duration_s / self.scenario.horizon_duration) as usize;
        while self.step < steps {
            self.step(backend, options, clock)?;
        }
        Ok(self.metrics())
    }

    pub fn metrics(&self) -> Metrics {
        let t = self.time_s();
        let queued_wait = self
            .queues
            .iter()
            .flat_map(|q| q.iter().map(|v| t - v.arrival_s))
            .fold(0.0, f64::max);
        let max_wait_s = self.waits.iter().copied().fold(queued_wait, f64::max);
        let mean = |xs: &[f64]| {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        Metrics {
            seed: self.seed,
            planner: self.planner,
            delta: self.scenario.delta,
            horizon: self.scenario.horizon,
            hv_fraction: self.scenario.hv_fraction,
            duration_s: t,
            steps: self.step,
            arrived: self.arrived,
            departed: self.departed,
            throughput_vpm: if t > 0.0 {
                self.departed as f64 / (t / 60.0)
            } else {
                0.0
            },
            max_wait_s,
            mean_wait_s: mean(&self.waits),
            collisions: self.collisions,
            collision_rate: if self.step > 0 {
                self.collisions as f64 / self.step as f64
            } else {
                0.0
            },
            plans: self.plans,
            fallbacks: self.fallbacks,
            mean_plan_s: mean(&self.plan_s),
            max_plan_s: self.plan_s.iter().copied().fold(0.0, f64::max),
            max_planned_risk: self.max_planned_risk,
            halted_steps: self.halted_steps,
        }
    }
}

/// Step at which vehicle 0 enters, if within `max_steps`.
pub fn first_entry_step(
    scenario: &Scenario,
    library: Arc<ManeuverLibrary>,
    seed: u64,
    max_steps: usize,
    backend: &mut dyn MilpBackend,
    options: &SolveOptions,
) -> Result<Option<usize>, IntersectionError> {
    let mut sim = Simulation::new(scenario, library, PlannerKind::MccSsp, seed)?;
    for k in 0..max_steps {
        let rec = sim.step(backend, options, &NoClock)?;
        if rec.entered.iter().any(|&(id, _)| id == 0) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}
