//! Maneuver tubes and offline risk tables for a scenario.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::layout::{polyline_length, sample_at_speed, Approach, Turn};
use super::scenario::{Scenario, ScenarioError};
use crate::pft::{
    pft_fit, synthetic_trajectories, Axis, CollisionMatrix, Pft, Point, RiskTable, TrackingNoise,
    VehicleGeometry,
};
use crate::seed;

const TAG_TUBE: u64 = 11;
const TAG_RISK: u64 = 12;
/// Extra distance beyond the combined vehicle reach within which two routes
/// are checked for conflicts.
const CONFLICT_MARGIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub name: String,
    pub approach: Approach,
    pub lane: usize,
    pub turn: Turn,
    /// Dense nominal path from the stop position to the exit.
    pub path: Vec<Point>,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Maneuver {
    pub label: String,
    pub route: usize,
    pub variant: usize,
    pub speed: f64,
    pub tube: Pft,
    /// Distance along the tube means up to each index.
    pub arc: Vec<f64>,
}

impl Maneuver {
    pub fn axis(&self, stride: usize) -> Axis {
        Axis {
            tube_len: self.tube.len(),
            stride,
        }
    }
}

/// Risk tables of one maneuver pair `a <= b`, axes in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTables {
    pub a: usize,
    pub b: usize,
    /// Risk over the rest of both tubes, used for planning.
    pub plan: RiskTable,
    /// Risk over one planning step, used to sample collisions.
    pub step: RiskTable,
}

/// All maneuvers of a scenario with their pairwise risk tables.
///
/// Progression index 0 means waiting at the stop position; index `p >= 1`
/// means having driven since the previous planning step from tube index
/// `(p - 1) * stride`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManeuverLibrary {
    pub stride: usize,
    pub window: usize,
    pub variant_names: Vec<String>,
    pub routes: Vec<Route>,
    /// Maneuver `route * variants + variant`.
    pub maneuvers: Vec<Maneuver>,
    route_conflicts: Vec<Vec<bool>>,
    pairs: Vec<PairTables>,
    index: BTreeMap<(usize, usize), usize>,
}

impl ManeuverLibrary {
    /// Builds tubes and tables sequentially. See [`LibraryBuilder`] for
    /// building with external parallelism or custom tubes.
    pub fn build(scenario: &Scenario) -> Result<Self, ScenarioError> {
        let builder = LibraryBuilder::new(scenario, &BTreeMap::new())?;
        let matrices = (0..builder.jobs().len())
            .map(|j| builder.compute(j))
            .collect();
        Ok(builder.finish(matrices))
    }

    pub fn num_variants(&self) -> usize {
        self.variant_names.len()
    }

    pub fn route_index(&self, approach: Approach, lane: usize, turn: Turn) -> Option<usize> {
        self.routes
            .iter()
            .position(|r| r.approach == approach && r.lane == lane && r.turn == turn)
    }

    pub fn route_by_name(&self, name: &str) -> Option<usize> {
        self.routes.iter().position(|r| r.name == name)
    }

    pub fn maneuver(&self, route: usize, variant: usize) -> usize {
        route * self.num_variants() + variant
    }

    pub fn maneuver_by_label(&self, label: &str) -> Option<usize> {
        self.maneuvers.iter().position(|m| m.label == label)
    }

    /// Largest progression index of maneuver `m`.
    pub fn max_progress(&self, m: usize) -> usize {
        self.maneuvers[m].axis(self.stride).size() - 1
    }

    /// Progression after one more planning step, or `None` once the vehicle
    /// has left.
    pub fn next_progress(&self, m: usize, p: usize) -> Option<usize> {
        (p < self.max_progress(m)).then_some(p + 1)
    }

    /// Tube index the vehicle has reached at progression `p`.
    pub fn position_index(&self, m: usize, p: usize) -> usize {
        (p * self.stride).min(self.maneuvers[m].tube.len() - 1)
    }

    pub fn routes_conflict(&self, a: usize, b: usize) -> bool {
        self.route_conflicts[a][b]
    }

    pub fn pairs(&self) -> &[PairTables] {
        &self.pairs
    }

    /// Tables of a maneuver pair and whether `(a, b)` is swapped relative
    /// to the table axes.
    pub fn pair(&self, a: usize, b: usize) -> Option<(&PairTables, bool)> {
        let (key, swapped) = if a <= b {
            ((a, b), false)
        } else {
            ((b, a), true)
        };
        self.index.get(&key).map(|&i| (&self.pairs[i], swapped))
    }

    fn lookup(&self, a: usize, pa: usize, b: usize, pb: usize, plan: bool) -> f64 {
        match self.pair(a, b) {
            Some((t, swapped)) => {
                let table = if plan { &t.plan } else { &t.step };
                let idx = if swapped { [pb, pa] } else { [pa, pb] };
                table.get(&idx).unwrap_or(0.0)
            }
            None => 0.0,
        }
    }

    /// Planning risk of maneuver `a` at progression `pa` against `b` at `pb`.
    pub fn plan_risk(&self, a: usize, pa: usize, b: usize, pb: usize) -> f64 {
        self.lookup(a, pa, b, pb, true)
    }

    /// Collision probability within one planning step.
    pub fn step_risk(&self, a: usize, pa: usize, b: usize, pb: usize) -> f64 {
        self.lookup(a, pa, b, pb, false)
    }

    /// Drops every risk table and route conflict.
    pub fn clear_pairs(&mut self) {
        self.pairs.clear();
        self.index.clear();
        for row in &mut self.route_conflicts {
            row.iter_mut().for_each(|c| *c = false);
        }
    }

    /// Adds or replaces the tables of a maneuver pair and marks the routes
    /// as conflicting.
    pub fn insert_pair(&mut self, tables: PairTables) {
        let key = (tables.a.min(tables.b), tables.a.max(tables.b));
        let (ra, rb) = (self.maneuvers[key.0].route, self.maneuvers[key.1].route);
        self.route_conflicts[ra][rb] = true;
        self.route_conflicts[rb][ra] = true;
        match self.index.get(&key) {
            Some(&i) => self.pairs[i] = tables,
            None => {
                self.index.insert(key, self.pairs.len());
                self.pairs.push(tables);
            }
        }
    }
}

/// Staged construction: tubes first, then one collision matrix per job,
/// then tables.
#[derive(Debug)]
pub struct LibraryBuilder {
    stride: usize,
    variant_names: Vec<String>,
    routes: Vec<Route>,
    maneuvers: Vec<Maneuver>,
    geometry: VehicleGeometry,
    samples: usize,
    seed: u64,
    /// Route pairs checked for conflicts and whether they are forced.
    candidates: Vec<((usize, usize), bool)>,
    jobs: Vec<(usize, usize)>,
}

fn min_distance(a: &[Point], b: &[Point]) -> f64 {
    let step = 10;
    let mut best = f64::INFINITY;
    for p in a.iter().step_by(step).chain(a.last()) {
        for q in b.iter().step_by(step).chain(b.last()) {
            best = best.min(libm::hypot(p[0] - q[0], p[1] - q[1]));
        }
    }
    best
}

fn cumulative_arc(points: &[Point]) -> Vec<f64> {
    let mut arc = Vec::with_capacity(points.len());
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            let q = points[i - 1];
            total += libm::hypot(p[0] - q[0], p[1] - q[1]);
        }
        arc.push(total);
    }
    arc
}

/// Tube of a maneuver fitted to synthetic noisy executions of `nominal`.
pub fn synthetic_tube(
    nominal: &[Point],
    dt: f64,
    count: usize,
    noise: &TrackingNoise,
    seed: u64,
    label: &str,
) -> Result<Pft, ScenarioError> {
    let trajectories = synthetic_trajectories(nominal, dt, count, noise, seed);
    // The executions share a clock, so they are fitted index by index and
    // timing spread stays in the covariance.
    pft_fit(&trajectories, dt, None, label).map_err(|source| ScenarioError::Tube {
        label: String::from(label),
        source,
    })
}

impl LibraryBuilder {
    /// Lays out routes and fits tubes. `tubes` replaces the synthetic tube
    /// of any maneuver label it contains.
    pub fn new(scenario: &Scenario, tubes: &BTreeMap<String, Pft>) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let dt = scenario.pft_timestep;
        let variant_names = scenario.variant_names();
        let mut routes = Vec::new();
        for approach in Approach::ALL {
            for lane in 0..2 {
                for turn in [Turn::Left, Turn::Straight, Turn::Right] {
                    if let Some(path) = scenario.layout.path(approach, lane, turn) {
                        routes.push(Route {
                            name: format!("{}{}_{}", approach.letter(), lane, turn.name()),
                            approach,
                            lane,
                            turn,
                            length: polyline_length(&path),
                            path,
                        });
                    }
                }
            }
        }
        let mut maneuvers = Vec::new();
        for (r, route) in routes.iter().enumerate() {
            for (v, &speed) in scenario.speeds.iter().enumerate() {
                let label = format!("{}_{}", route.name, variant_names[v]);
                let tube = match tubes.get(&label) {
                    Some(t) => {
                        t.validate().map_err(|source| ScenarioError::Tube {
                            label: label.clone(),
                            source,
                        })?;
                        if (t.timestep - dt).abs() > 1e-9 {
                            return Err(ScenarioError::TubeTimestep(label));
                        }
                        t.clone()
                    }
                    None => {
                        let nominal = sample_at_speed(&route.path, speed, dt);
                        let s =
                            seed::derive(scenario.library_seed, &[TAG_TUBE, r as u64, v as u64]);
                        synthetic_tube(
                            &nominal,
                            dt,
                            scenario.trajectories_per_tube,
                            &scenario.tracking,
                            s,
                            &label,
                        )?
                    }
                };
                maneuvers.push(Maneuver {
                    arc: cumulative_arc(&tube.means),
                    label,
                    route: r,
                    variant: v,
                    speed,
                    tube,
                });
            }
        }

        let reach = scenario.geometry.reach();
        let mut candidates = Vec::new();
        match &scenario.conflicts {
            Some(list) => {
                for (x, y) in list {
                    let find = |n: &str| {
                        routes
                            .iter()
                            .position(|r| r.name == n)
                            .ok_or_else(|| ScenarioError::UnknownRoute(String::from(n)))
                    };
                    let (a, b) = (find(x)?, find(y)?);
                    let key = (a.min(b), a.max(b));
                    if !candidates.iter().any(|(k, _)| *k == key) {
                        candidates.push((key, true));
                    }
                }
                candidates.sort();
            }
            None => {
                for a in 0..routes.len() {
                    for b in a..routes.len() {
                        if min_distance(&routes[a].path, &routes[b].path)
                            < 2.0 * reach + CONFLICT_MARGIN
                        {
                            candidates.push(((a, b), false));
                        }
                    }
                }
            }
        }
        let nv = scenario.speeds.len();
        let mut jobs = Vec::new();
        for &((ra, rb), _) in &candidates {
            for va in 0..nv {
                for vb in 0..nv {
                    let (ma, mb) = (ra * nv + va, rb * nv + vb);
                    if ma <= mb {
                        jobs.push((ma, mb));
                    }
                }
            }
        }
        Ok(LibraryBuilder {
            stride: scenario.stride(),
            variant_names,
            routes,
            maneuvers,
            geometry: scenario.geometry,
            samples: scenario.risk_samples,
            seed: scenario.library_seed,
            candidates,
            jobs,
        })
    }

    /// Maneuver pairs `(a, b)`, `a <= b`, needing a collision matrix.
    pub fn jobs(&self) -> &[(usize, usize)] {
        &self.jobs
    }

    pub fn maneuvers(&self) -> &[Maneuver] {
        &self.maneuvers
    }

    /// Collision matrix of job `j`; deterministic in the library seed.
    pub fn compute(&self, j: usize) -> CollisionMatrix {
        let (a, b) = self.jobs[j];
        let s = seed::derive(self.seed, &[TAG_RISK, a as u64, b as u64]);
        CollisionMatrix::compute(
            &self.maneuvers[a].tube,
            &self.maneuvers[b].tube,
            &self.geometry,
            &self.geometry,
            self.samples,
            s,
        )
    }

    /// Turns the matrices, in job order, into tables.
    pub fn finish(self, matrices: Vec<CollisionMatrix>) -> ManeuverLibrary {
        assert_eq!(matrices.len(), self.jobs.len(), "one matrix per job");
        let window = self
            .maneuvers
            .iter()
            .map(|m| m.tube.len())
            .max()
            .unwrap_or(0);
        let n_routes = self.routes.len();
        let mut lib = ManeuverLibrary {
            stride: self.stride,
            window,
            variant_names: self.variant_names,
            routes: self.routes,
            maneuvers: self.maneuvers,
            route_conflicts: alloc::vec![alloc::vec![false; n_routes]; n_routes],
            pairs: Vec::new(),
            index: BTreeMap::new(),
        };
        for (&(a, b), m) in self.jobs.iter().zip(&matrices) {
            let (ra, rb) = (lib.maneuvers[a].route, lib.maneuvers[b].route);
            let forced = self
                .candidates
                .iter()
                .any(|&(k, f)| f && k == (ra.min(rb), ra.max(rb)));
            if !forced && m.probs.iter().all(|&p| p == 0.0) {
                continue;
            }
            let labels = alloc::vec![
                lib.maneuvers[a].label.clone(),
                lib.maneuvers[b].label.clone()
            ];
            let axes = alloc::vec![
                lib.maneuvers[a].axis(lib.stride),
                lib.maneuvers[b].axis(lib.stride)
            ];
            let table = |w: usize| {
                RiskTable::from_matrices(
                    labels.clone(),
                    axes.clone(),
                    w,
                    self.seed,
                    self.samples,
                    |_, _| Some(m),
                )
            };
            let tables = PairTables {
                a,
                b,
                plan: table(window),
                step: table(lib.stride),
            };
            lib.insert_pair(tables);
        }
        lib
    }
}
