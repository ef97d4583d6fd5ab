//! Vehicles as agents of the planning model.
//!
//! An agent state packs the vehicle's phase into a [`StateId`]. Waiting
//! states carry the number of planning steps waited so far; executing states
//! carry the maneuver and progression index of the library. States of the
//! snapshot a model is built from are flagged: the step they describe has
//! already been survived, so they carry no risk.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::library::ManeuverLibrary;
use super::scenario::{VehicleKind, Weights};
use crate::model::{ActionId, AgentModel, RiskModel, StateId};

/// What a vehicle is doing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// At the stop position.
    Waiting,
    Executing {
        maneuver: usize,
        progress: usize,
    },
    Departed,
}

/// A vehicle in the simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u64,
    pub kind: VehicleKind,
    /// Index of the source lane in the scenario.
    pub lane: usize,
    /// Route the vehicle will take. For human drivers the planner only
    /// knows a belief over the lane's routes.
    pub route: usize,
    pub phase: Phase,
    /// Seconds waited so far, capped by the scenario.
    pub waited_s: f64,
    /// 1 (lowest) to 10.
    pub priority: u8,
    pub arrival_s: f64,
    pub started_s: Option<f64>,
}

const SNAPSHOT: u64 = 1 << 63;
const TAG_SHIFT: u32 = 56;
const M_SHIFT: u32 = 24;
const LOW_MASK: u64 = (1 << 24) - 1;

/// Decoded agent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentState {
    Waiting {
        steps: u32,
    },
    Executing {
        maneuver: usize,
        progress: usize,
    },
    Departed,
    /// Executing a maneuver the planner is not yet sure of.
    Ambiguous {
        progress: usize,
    },
}

pub fn encode(state: AgentState, snapshot: bool) -> StateId {
    let flag = if snapshot { SNAPSHOT } else { 0 };
    flag | match state {
        AgentState::Waiting { steps } => steps as u64,
        AgentState::Executing { maneuver, progress } => {
            (1 << TAG_SHIFT) | ((maneuver as u64) << M_SHIFT) | progress as u64
        }
        AgentState::Departed => 2 << TAG_SHIFT,
        AgentState::Ambiguous { progress } => (3 << TAG_SHIFT) | progress as u64,
    }
}

/// Inverse of [`encode`]: the state and whether it is a snapshot state.
pub fn decode(s: StateId) -> (AgentState, bool) {
    let snapshot = s & SNAPSHOT != 0;
    let low = s & LOW_MASK;
    let state = match (s >> TAG_SHIFT) & 0x7f {
        0 => AgentState::Waiting { steps: low as u32 },
        1 => AgentState::Executing {
            maneuver: ((s >> M_SHIFT) & 0xff_ffff) as usize,
            progress: low as usize,
        },
        2 => AgentState::Departed,
        _ => AgentState::Ambiguous {
            progress: low as usize,
        },
    };
    (state, snapshot)
}

/// Utility of starting a maneuver: velocity, priority, waiting and lane
/// priority terms. Waiting itself earns nothing.
pub fn utility(
    weights: &Weights,
    speed: f64,
    priority: f64,
    waited_s: f64,
    lane_priority: f64,
) -> f64 {
    weights.velocity * speed
        + weights.priority * priority
        + weights.waiting * libm::sqrt(waited_s.max(0.0))
        + weights.lane_priority * lane_priority
}

/// A vehicle's decision model over one planning horizon.
#[derive(Clone, Debug)]
pub struct VehicleAgent {
    pub library: Arc<ManeuverLibrary>,
    pub kind: VehicleKind,
    /// Maneuver started by each action; `None` waits (or continues an
    /// ongoing maneuver).
    pub actions: Vec<Option<usize>>,
    pub initial: StateId,
    /// Maneuver whose start is the stop position of the vehicle.
    pub rest: usize,
    /// Maneuvers with probabilities for a human driver that enters, or for
    /// an ambiguous ongoing maneuver.
    pub branches: Vec<(usize, f64)>,
    /// Whether a waiting human driver enters with its single action.
    pub drives: bool,
    /// Waiting steps at the snapshot.
    pub waited0: u32,
    pub max_wait_steps: u32,
    pub step_s: f64,
    pub weights: Weights,
    pub priority: f64,
    pub lane_priority: f64,
    pub step_discount: f64,
}

impl VehicleAgent {
    fn push_executing(&self, m: usize, p: usize, out: &mut Vec<(StateId, f64)>, prob: f64) {
        let next = match self.library.next_progress(m, p) {
            Some(q) => AgentState::Executing {
                maneuver: m,
                progress: q,
            },
            None => AgentState::Departed,
        };
        out.push((encode(next, false), prob));
    }
}

impl AgentModel for VehicleAgent {
    fn num_actions(&self) -> usize {
        self.actions.len()
    }

    fn initial_state(&self) -> StateId {
        self.initial
    }

    fn action_available(&self, state: StateId, action: ActionId) -> bool {
        action == 0 || matches!(decode(state).0, AgentState::Waiting { .. })
    }

    fn transition(&self, state: StateId, action: ActionId, out: &mut Vec<(StateId, f64)>) {
        match decode(state).0 {
            AgentState::Waiting { steps } => match self.actions.get(action).copied().flatten() {
                Some(m) => out.push((
                    encode(
                        AgentState::Executing {
                            maneuver: m,
                            progress: 1,
                        },
                        false,
                    ),
                    1.0,
                )),
                None if self.drives => {
                    for &(m, q) in &self.branches {
                        out.push((
                            encode(
                                AgentState::Executing {
                                    maneuver: m,
                                    progress: 1,
                                },
                                false,
                            ),
                            q,
                        ));
                    }
                }
                None => {
                    let steps = (steps + 1).min(self.max_wait_steps);
                    out.push((encode(AgentState::Waiting { steps }, false), 1.0));
                }
            },
            AgentState::Executing { maneuver, progress } => {
                self.push_executing(maneuver, progress, out, 1.0)
            }
            AgentState::Ambiguous { progress } => {
                for &(m, q) in &self.branches {
                    self.push_executing(m, progress, out, q);
                }
            }
            AgentState::Departed => out.push((encode(AgentState::Departed, false), 1.0)),
        }
    }

    fn utility(&self, state: StateId, action: ActionId) -> f64 {
        if self.kind == VehicleKind::Hv {
            return 0.0;
        }
        match (decode(state).0, self.actions.get(action).copied().flatten()) {
            (AgentState::Waiting { steps }, Some(m)) => {
                let delay = steps.saturating_sub(self.waited0) as i32;
                let speed = self.library.maneuvers[m].speed;
                let u = utility(
                    &self.weights,
                    speed,
                    self.priority,
                    steps as f64 * self.step_s,
                    self.lane_priority,
                );
                u * libm::pow(self.step_discount, delay as f64)
            }
            _ => 0.0,
        }
    }

    fn action_label(&self, action: ActionId) -> String {
        match self.actions.get(action).copied().flatten() {
            Some(m) => {
                let man = &self.library.maneuvers[m];
                let route = &self.library.routes[man.route];
                format!(
                    "{}_{}",
                    route.turn.name(),
                    self.library.variant_names[man.variant]
                )
            }
            None if self.drives => String::from("drive"),
            None => String::from("wait"),
        }
    }

    fn state_label(&self, state: StateId) -> String {
        let (s, snap) = decode(state);
        let mark = if snap { "*" } else { "" };
        match s {
            AgentState::Waiting { steps } => format!("{mark}wait({steps})"),
            AgentState::Executing { maneuver, progress } => {
                format!(
                    "{mark}{}@{progress}",
                    self.library.maneuvers[maneuver].label
                )
            }
            AgentState::Departed => format!("{mark}departed"),
            AgentState::Ambiguous { progress } => format!("{mark}ambiguous@{progress}"),
        }
    }
}

/// Planning risk of a pair of vehicles, looked up in the library tables.
#[derive(Clone, Debug)]
pub struct PairRisk {
    pub library: Arc<ManeuverLibrary>,
    /// Stop-position maneuver of each member.
    pub rest: [usize; 2],
}

impl PairRisk {
    fn resolve(&self, pos: usize, s: StateId) -> Option<(usize, usize)> {
        match decode(s) {
            (_, true) => None,
            (AgentState::Waiting { .. }, _) => Some((self.rest[pos], 0)),
            (AgentState::Executing { maneuver, progress }, _) => Some((maneuver, progress)),
            _ => None,
        }
    }
}

impl RiskModel for PairRisk {
    fn state_risk(&self, joint: &[StateId]) -> f64 {
        match (self.resolve(0, joint[0]), self.resolve(1, joint[1])) {
            (Some((a, pa)), Some((b, pb))) => self.library.plan_risk(a, pa, b, pb),
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_codec_round_trips() {
        for (s, snap) in [
            (AgentState::Waiting { steps: 0 }, false),
            (AgentState::Waiting { steps: 299 }, true),
            (
                AgentState::Executing {
                    maneuver: 31,
                    progress: 5,
                },
                false,
            ),
            (
                AgentState::Executing {
                    maneuver: 0,
                    progress: 1,
                },
                true,
            ),
            (AgentState::Departed, false),
            (AgentState::Ambiguous { progress: 3 }, true),
        ] {
            assert_eq!(decode(encode(s, snap)), (s, snap));
        }
        assert_ne!(
            encode(AgentState::Waiting { steps: 1 }, false),
            encode(
                AgentState::Executing {
                    maneuver: 0,
                    progress: 1
                },
                false
            )
        );
    }

    #[test]
    fn utility_terms() {
        let w = |v, p, wt, l| Weights {
            velocity: v,
            priority: p,
            waiting: wt,
            lane_priority: l,
        };
        assert_eq!(utility(&w(1.0, 0.0, 0.0, 0.0), 2.0, 5.0, 9.0, 3.0), 2.0);
        assert!(
            (utility(&w(0.0, 0.0, 4.0, 0.0), 2.0, 5.0, 10.0, 3.0) - 4.0 * 10f64.sqrt()).abs()
                < 1e-12
        );
        assert_eq!(utility(&w(0.0, 0.0, 0.0, 0.0), 2.0, 5.0, 9.0, 3.0), 0.0);
        assert_eq!(utility(&w(0.0, 1.0, 0.0, 2.0), 2.0, 5.0, 9.0, 3.0), 11.0);
    }
}
