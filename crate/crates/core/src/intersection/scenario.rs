//! Scenario parameters of the intersection experiments.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::layout::{Approach, Layout, Turn};
use crate::pft::{TrackingNoise, VehicleGeometry, DEFAULT_TIMESTEP};

/// How vehicles arrive on a lane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Arrival {
    #[default]
    None,
    /// Poisson arrivals with `rate` vehicles per second.
    Poisson { rate: f64 },
    /// The queue never runs empty.
    Saturated,
}

/// An incoming lane and the turns its vehicles take.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub approach: Approach,
    /// 0 for the inner lane, 1 for the outer lane.
    pub lane: usize,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub arrival: Arrival,
}

impl LaneSpec {
    pub fn name(&self) -> String {
        format!("{}{}", self.approach.letter(), self.lane)
    }
}

/// Weights of the vehicle utility terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    /// Per m/s of maneuver speed.
    pub velocity: f64,
    /// Per unit of the vehicle's priority.
    pub priority: f64,
    /// Per square root of waited seconds.
    pub waiting: f64,
    /// Per unit of the mean priority on the vehicle's lane.
    pub lane_priority: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            velocity: 1.0,
            priority: 0.0,
            waiting: 0.5,
            lane_priority: 0.0,
        }
    }
}

/// Kind of a vehicle placed in the scenario at time zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    #[default]
    Av,
    Hv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialVehicle {
    /// Index into [`Scenario::lanes`].
    pub lane: usize,
    pub turn: Turn,
    #[serde(default)]
    pub kind: VehicleKind,
    #[serde(default = "default_priority")]
    pub priority: u8,
}

fn default_priority() -> u8 {
    1
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{0} must lie in [0,1]")]
    Fraction(&'static str),
    #[error("horizon duration {dt} s is not a whole number of tube steps of {step} s")]
    Stride { dt: f64, step: f64 },
    #[error("lane {lane}: turn {turn} is not possible from this lane")]
    BadTurn { lane: String, turn: &'static str },
    #[error("lane {0} appears twice")]
    DuplicateLane(String),
    #[error("lane {0} lists no turns")]
    NoTurns(String),
    #[error("initial vehicle refers to lane {0}")]
    UnknownLane(usize),
    #[error("unknown route `{0}`")]
    UnknownRoute(String),
    #[error("priority range is empty")]
    PriorityRange,
    #[error("no speed variants")]
    NoSpeeds,
    #[error("tube {label}: {source}")]
    Tube {
        label: String,
        source: crate::pft::PftError,
    },
    #[error("tube {0} has a different timestep than the scenario")]
    TubeTimestep(String),
}

/// Everything needed to build the maneuver library and run simulations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub layout: Layout,
    /// Tube sampling period in seconds.
    pub pft_timestep: f64,
    /// Time between planning steps in seconds.
    pub horizon_duration: f64,
    /// Maneuver speeds in m/s, one variant each.
    pub speeds: Vec<f64>,
    pub geometry: VehicleGeometry,
    pub tracking: TrackingNoise,
    pub trajectories_per_tube: usize,
    pub risk_samples: usize,
    pub library_seed: u64,
    pub lanes: Vec<LaneSpec>,
    pub initial_vehicles: Vec<InitialVehicle>,
    /// Share of arriving vehicles that are human driven.
    pub hv_fraction: f64,
    /// Seconds each approach keeps the human-driver green light.
    pub signal_period: f64,
    pub weights: Weights,
    /// Inclusive range priorities are drawn from.
    pub priority_range: (u8, u8),
    pub delta: f64,
    pub horizon: usize,
    /// Utility factor per step of delay within a planning horizon.
    pub step_discount: f64,
    pub max_wait_s: f64,
    /// Distance the previous vehicle of a lane must have driven before the
    /// next one moves up to the stop position, in metres.
    pub queue_gap: f64,
    /// A human driver with a green light enters once the risk against every
    /// vehicle in the box is at most this.
    pub hv_clear_risk: f64,
    /// Chance that a human driver leaves its tube, halting the intersection.
    pub hv_deviation_prob: f64,
    /// Explicit conflicting route pairs by route name, replacing the
    /// geometric test.
    pub conflicts: Option<Vec<(String, String)>>,
    /// Tube files by maneuver label, replacing synthetic tubes.
    pub tube_files: BTreeMap<String, String>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            layout: Layout::default(),
            pft_timestep: DEFAULT_TIMESTEP,
            horizon_duration: 1.0,
            speeds: vec![5.0, 8.0],
            geometry: VehicleGeometry::default(),
            tracking: TrackingNoise {
                p_gain: (0.4, 1.2),
                d_gain: (0.2, 0.8),
                initial_offset_sd: 0.05,
                accel_noise_sd: 0.1,
                speed_scale_sd: 0.05,
                max_error: 1.0,
            },
            trajectories_per_tube: 30,
            risk_samples: 2000,
            library_seed: 0,
            lanes: default_lanes(Arrival::Poisson { rate: 0.3 }),
            initial_vehicles: Vec::new(),
            hv_fraction: 0.0,
            signal_period: 60.0,
            weights: Weights::default(),
            priority_range: (1, 10),
            delta: 0.05,
            horizon: 1,
            step_discount: 0.9,
            max_wait_s: 300.0,
            queue_gap: 8.0,
            hv_clear_risk: 1e-3,
            hv_deviation_prob: 0.0,
            conflicts: None,
            tube_files: BTreeMap::new(),
        }
    }
}

/// The eight incoming lanes: inner lanes turn left or go straight, outer
/// lanes go straight or turn right.
pub fn default_lanes(arrival: Arrival) -> Vec<LaneSpec> {
    Approach::ALL
        .iter()
        .flat_map(|&approach| {
            [
                LaneSpec {
                    approach,
                    lane: 0,
                    turns: vec![Turn::Left, Turn::Straight],
                    arrival,
                },
                LaneSpec {
                    approach,
                    lane: 1,
                    turns: vec![Turn::Straight, Turn::Right],
                    arrival,
                },
            ]
        })
        .collect()
}

impl Scenario {
    /// Tube steps per planning step.
    pub fn stride(&self) -> usize {
        libm::round(self.horizon_duration / self.pft_timestep) as usize
    }

    pub fn variant_names(&self) -> Vec<String> {
        match self.speeds.len() {
            1 => vec![String::from("go")],
            2 => vec![String::from("slow"), String::from("fast")],
            n => (0..n).map(|i| format!("v{i}")).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("lane_width", self.layout.lane_width),
            ("pft_timestep", self.pft_timestep),
            ("horizon_duration", self.horizon_duration),
            ("signal_period", self.signal_period),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(ScenarioError::NotPositive(name));
            }
        }
        if self.layout.stop_setback < 0.0 || self.layout.exit_run < 0.0 {
            return Err(ScenarioError::NotPositive("stop_setback and exit_run"));
        }
        if self.speeds.is_empty() {
            return Err(ScenarioError::NoSpeeds);
        }
        if self.speeds.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(ScenarioError::NotPositive("speeds"));
        }
        if self.horizon == 0 {
            return Err(ScenarioError::NotPositive("horizon"));
        }
        for (name, v) in [
            ("hv_fraction", self.hv_fraction),
            ("delta", self.delta),
            ("step_discount", self.step_discount),
            ("hv_clear_risk", self.hv_clear_risk),
            ("hv_deviation_prob", self.hv_deviation_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ScenarioError::Fraction(name));
            }
        }
        let stride = self.stride();
        if stride == 0 || (stride as f64 * self.pft_timestep - self.horizon_duration).abs() > 1e-9 {
            return Err(ScenarioError::Stride {
                dt: self.horizon_duration,
                step: self.pft_timestep,
            });
        }
        if self.priority_range.0 > self.priority_range.1 {
            return Err(ScenarioError::PriorityRange);
        }
        let mut seen = Vec::new();
        for lane in &self.lanes {
            let key = (lane.approach, lane.lane);
            if seen.contains(&key) {
                return Err(ScenarioError::DuplicateLane(lane.name()));
            }
            seen.push(key);
            if lane.turns.is_empty() {
                return Err(ScenarioError::NoTurns(lane.name()));
            }
            for &turn in &lane.turns {
                if self.layout.path(lane.approach, lane.lane, turn).is_none() {
                    return Err(ScenarioError::BadTurn {
                        lane: lane.name(),
                        turn: turn.name(),
                    });
                }
            }
            if let Arrival::Poisson { rate } = lane.arrival {
                if rate.is_nan() || rate < 0.0 {
                    return Err(ScenarioError::NotPositive("arrival rate"));
                }
            }
        }
        for v in &self.initial_vehicles {
            let lane = self
                .lanes
                .get(v.lane)
                .ok_or(ScenarioError::UnknownLane(v.lane))?;
            if self.layout.path(lane.approach, lane.lane, v.turn).is_none() {
                return Err(ScenarioError::BadTurn {
                    lane: lane.name(),
                    turn: v.turn.name(),
                });
            }
        }
        Ok(())
    }

    /// The waiting-time case study: endless straight-through traffic from
    /// the north and south while one automated vehicle waits on the west
    /// approach to turn left. Only the waiting weight varies.
    pub fn waiting_time_case(waiting_weight: f64) -> Scenario {
        let mut lanes: Vec<LaneSpec> = [Approach::South, Approach::North]
            .iter()
            .flat_map(|&approach| {
                (0..2).map(move |lane| LaneSpec {
                    approach,
                    lane,
                    turns: vec![Turn::Straight],
                    arrival: Arrival::Saturated,
                })
            })
            .collect();
        lanes.push(LaneSpec {
            approach: Approach::West,
            lane: 0,
            turns: vec![Turn::Left],
            arrival: Arrival::None,
        });
        let speed = 6.0;
        Scenario {
            speeds: vec![speed],
            lanes,
            initial_vehicles: vec![InitialVehicle {
                lane: 4,
                turn: Turn::Left,
                kind: VehicleKind::Av,
                priority: 1,
            }],
            weights: Weights {
                velocity: 1.0 / speed,
                priority: 0.0,
                waiting: waiting_weight,
                lane_priority: 0.0,
            },
            delta: 0.01,
            horizon: 4,
            ..Scenario::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let s = Scenario::default();
        s.validate().unwrap();
        assert_eq!(s.stride(), 6);
        assert_eq!(s.lanes.len(), 8);
        Scenario::waiting_time_case(4.0).validate().unwrap();
    }

    #[test]
    fn rejects_bad_turns_and_strides() {
        let mut s = Scenario::default();
        s.lanes[1].turns.push(Turn::Left);
        assert!(matches!(s.validate(), Err(ScenarioError::BadTurn { .. })));
        let s = Scenario {
            horizon_duration: 0.25,
            ..Scenario::default()
        };
        assert!(matches!(s.validate(), Err(ScenarioError::Stride { .. })));
    }
}
