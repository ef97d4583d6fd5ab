//! Multi-agent grid benchmark.
//!
//! Robots move in four directions on a large grid. Each robot is its own
//! interaction point, so robots are independent except for sharing one risk
//! budget. Cell properties (risky or not, utility) are a deterministic hash
//! of the cell coordinates and the seed, so two grids of different size agree
//! on every cell they have in common.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ActionId, AgentModel, InteractionPoint, MccSspInstance, RiskModel, StateId};
use crate::seed;

const TAG_RISKY: u64 = 1;
const TAG_UTILITY: u64 = 2;
const TAG_STARTS: u64 = 3;

/// What happens when a move does not succeed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    #[default]
    StayInPlace,
    /// Move to one of the two perpendicular neighbours with equal chance.
    SlipLateral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub width: u64,
    pub height: u64,
    pub n_agents: usize,
    pub success_prob: f64,
    pub failure_mode: FailureMode,
    pub risky_fraction: f64,
    pub risky_risk_value: f64,
    pub low_utility_fraction: f64,
    pub low_utility: f64,
    pub high_utility: f64,
    pub horizon: usize,
    pub delta: f64,
    pub seed: u64,
    /// Explicit start cells `(x, y)`; drawn uniformly from the seed if absent.
    pub starts: Option<Vec<(u64, u64)>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            width: 10_000,
            height: 10_000,
            n_agents: 1,
            success_prob: 0.8,
            failure_mode: FailureMode::StayInPlace,
            risky_fraction: 0.05,
            risky_risk_value: 0.1,
            low_utility_fraction: 0.10,
            low_utility: 1.0,
            high_utility: 2.0,
            horizon: 3,
            delta: 0.1,
            seed: 0,
            starts: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("{0} must lie in [0,1]")]
    Fraction(&'static str),
    #[error("grid has {cells} cells, fewer than {agents} agents")]
    TooSmall { cells: u128, agents: usize },
    #[error("start cell ({0}, {1}) lies outside the grid")]
    StartOutside(u64, u64),
    #[error("{given} start cells given for {agents} agents")]
    StartCount { given: usize, agents: usize },
    #[error("utilities must be non-negative")]
    NegativeUtility,
}

/// Seeded cell properties shared by all agents of a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellField {
    pub seed: u64,
    pub risky_fraction: f64,
    pub risky_risk_value: f64,
    pub low_utility_fraction: f64,
    pub low_utility: f64,
    pub high_utility: f64,
}

impl CellField {
    pub fn is_risky(&self, x: u64, y: u64) -> bool {
        seed::unit(seed::derive(self.seed, &[TAG_RISKY, x, y])) < self.risky_fraction
    }

    pub fn risk(&self, x: u64, y: u64) -> f64 {
        if self.is_risky(x, y) {
            self.risky_risk_value
        } else {
            0.0
        }
    }

    pub fn utility(&self, x: u64, y: u64) -> f64 {
        if seed::unit(seed::derive(self.seed, &[TAG_UTILITY, x, y])) < self.low_utility_fraction {
            self.low_utility
        } else {
            self.high_utility
        }
    }
}

/// Moves in the order north, east, south, west.
pub const MOVES: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
pub const MOVE_LABELS: [&str; 4] = ["north", "east", "south", "west"];

#[derive(Clone, Debug, PartialEq)]
pub struct GridAgent {
    pub width: u64,
    pub height: u64,
    pub start: (u64, u64),
    pub success_prob: f64,
    pub failure_mode: FailureMode,
    pub field: CellField,
}

impl GridAgent {
    pub fn cell(&self, s: StateId) -> (u64, u64) {
        (s % self.width, s / self.width)
    }

    pub fn state(&self, x: u64, y: u64) -> StateId {
        y * self.width + x
    }

    /// Target of a move, staying put at the border.
    fn step(&self, s: StateId, dir: usize) -> StateId {
        let (x, y) = self.cell(s);
        let (dx, dy) = MOVES[dir];
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            s
        } else {
            self.state(nx as u64, ny as u64)
        }
    }
}

impl AgentModel for GridAgent {
    fn num_actions(&self) -> usize {
        4
    }

    fn initial_state(&self) -> StateId {
        self.state(self.start.0, self.start.1)
    }

    fn transition(&self, state: StateId, action: ActionId, out: &mut Vec<(StateId, f64)>) {
        let p = self.success_prob;
        out.push((self.step(state, action), p));
        if p < 1.0 {
            match self.failure_mode {
                FailureMode::StayInPlace => out.push((state, 1.0 - p)),
                FailureMode::SlipLateral => {
                    let half = (1.0 - p) / 2.0;
                    out.push((self.step(state, (action + 1) % 4), half));
                    out.push((self.step(state, (action + 3) % 4), half));
                }
            }
        }
    }

    fn utility(&self, state: StateId, _action: ActionId) -> f64 {
        let (x, y) = self.cell(state);
        self.field.utility(x, y)
    }

    fn action_label(&self, action: ActionId) -> String {
        String::from(MOVE_LABELS[action])
    }

    fn state_label(&self, state: StateId) -> String {
        let (x, y) = self.cell(state);
        format!("({x},{y})")
    }
}

/// Risk of a single grid agent's cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRisk {
    pub width: u64,
    pub field: CellField,
}

impl RiskModel for GridRisk {
    fn state_risk(&self, joint: &[StateId]) -> f64 {
        let s = joint[0];
        self.field.risk(s % self.width, s / self.width)
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        for (name, v) in [
            ("success_prob", self.success_prob),
            ("risky_fraction", self.risky_fraction),
            ("risky_risk_value", self.risky_risk_value),
            ("low_utility_fraction", self.low_utility_fraction),
            ("delta", self.delta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GridError::Fraction(name));
            }
        }
        if self.low_utility < 0.0 || self.high_utility < 0.0 {
            return Err(GridError::NegativeUtility);
        }
        let cells = self.width as u128 * self.height as u128;
        if cells < self.n_agents as u128 || cells == 0 {
            return Err(GridError::TooSmall {
                cells,
                agents: self.n_agents,
            });
        }
        if let Some(starts) = &self.starts {
            if starts.len() != self.n_agents {
                return Err(GridError::StartCount {
                    given: starts.len(),
                    agents: self.n_agents,
                });
            }
            for &(x, y) in starts {
                if x >= self.width || y >= self.height {
                    return Err(GridError::StartOutside(x, y));
                }
            }
        }
        Ok(())
    }

    pub fn field(&self) -> CellField {
        CellField {
            seed: self.seed,
            risky_fraction: self.risky_fraction,
            risky_risk_value: self.risky_risk_value,
            low_utility_fraction: self.low_utility_fraction,
            low_utility: self.low_utility,
            high_utility: self.high_utility,
        }
    }

    /// Start cells, explicit or drawn from the seed.
    pub fn start_cells(&self) -> Vec<(u64, u64)> {
        if let Some(s) = &self.starts {
            return s.clone();
        }
        let mut rng = seed::rng(seed::derive(self.seed, &[TAG_STARTS]));
        (0..self.n_agents)
            .map(|_| {
                (
                    rng.random_range(0..self.width),
                    rng.random_range(0..self.height),
                )
            })
            .collect()
    }
}

/// Builds the benchmark instance described by `spec`.
pub fn generate_grid_instance(spec: &GridSpec) -> Result<MccSspInstance, GridError> {
    spec.validate()?;
    let field = spec.field();
    let mut inst = MccSspInstance::new(spec.horizon, vec![spec.delta]);
    let risk: Arc<dyn RiskModel> = Arc::new(GridRisk {
        width: spec.width,
        field,
    });
    for (n, start) in spec.start_cells().into_iter().enumerate() {
        let agent = GridAgent {
            width: spec.width,
            height: spec.height,
            start,
            success_prob: spec.success_prob,
            failure_mode: spec.failure_mode,
            field,
        };
        let id = inst.add_agent(format!("robot{n}"), Arc::new(agent));
        inst.add_interaction(InteractionPoint::new(vec![id], vec![risk.clone()]));
    }
    inst.assign_default_utility_owners();
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::reachable_layers;
    use crate::model::validate_instance;

    #[test]
    fn manhattan_ball_layers() {
        let spec = GridSpec {
            width: 100,
            height: 100,
            horizon: 3,
            starts: Some(vec![(50, 50)]),
            ..GridSpec::default()
        };
        let inst = generate_grid_instance(&spec).unwrap();
        assert!(validate_instance(&inst).is_valid());
        let space = reachable_layers(&inst);
        assert_eq!(space.interactions[0].layer_sizes(), vec![1, 5, 13, 25]);
    }

    #[test]
    fn slip_mode_is_normalized() {
        let spec = GridSpec {
            width: 5,
            height: 5,
            failure_mode: FailureMode::SlipLateral,
            horizon: 2,
            starts: Some(vec![(0, 0)]),
            ..GridSpec::default()
        };
        let inst = generate_grid_instance(&spec).unwrap();
        assert!(validate_instance(&inst).is_valid());
    }

    #[test]
    fn same_seed_same_instance() {
        let spec = GridSpec {
            n_agents: 3,
            seed: 7,
            ..GridSpec::default()
        };
        assert_eq!(spec.start_cells(), spec.clone().start_cells());
        let f = spec.field();
        let risky = (0..100u64)
            .flat_map(|x| (0..100u64).map(move |y| (x, y)))
            .filter(|&(x, y)| f.is_risky(x, y))
            .count();
        // 5% of 10k cells, loosely.
        assert!((350..650).contains(&risky), "{risky}");
    }

    #[test]
    fn invalid_specs() {
        let bad = GridSpec {
            risky_fraction: 1.5,
            ..GridSpec::default()
        };
        assert_eq!(bad.validate(), Err(GridError::Fraction("risky_fraction")));
        let bad = GridSpec {
            width: 1,
            height: 1,
            n_agents: 2,
            ..GridSpec::default()
        };
        assert!(matches!(bad.validate(), Err(GridError::TooSmall { .. })));
    }
}
