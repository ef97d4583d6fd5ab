//! Geometry of the two-lane four-way intersection.
//!
//! The box is centred at the origin. Traffic keeps right. Each approach has
//! an inner lane (index 0, next to the centre line) and an outer lane
//! (index 1). Paths are built for the south approach and rotated.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::pft::Point;

/// Side a vehicle arrives from, in counter-clockwise order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    South,
    East,
    North,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::South,
        Approach::East,
        Approach::North,
        Approach::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Approach::South => 'S',
            Approach::East => 'E',
            Approach::North => 'N',
            Approach::West => 'W',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl Turn {
    pub fn name(self) -> &'static str {
        match self {
            Turn::Left => "left",
            Turn::Straight => "straight",
            Turn::Right => "right",
        }
    }
}

/// Dimensions of the layout in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub lane_width: f64,
    /// Distance from the stop position to the edge of the box.
    pub stop_setback: f64,
    /// Distance driven past the edge of the box before leaving.
    pub exit_run: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            lane_width: 3.5,
            stop_setback: 4.0,
            exit_run: 6.0,
        }
    }
}

const ARC_STEP: f64 = 0.05;

fn rotate(p: Point, quarter_turns: usize) -> Point {
    let mut q = p;
    for _ in 0..quarter_turns % 4 {
        q = [-q[1], q[0]];
    }
    q
}

impl Layout {
    pub fn box_half_width(&self) -> f64 {
        2.0 * self.lane_width
    }

    /// Lateral offset of lane `lane` from the centre line.
    pub fn lane_offset(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Dense polyline of the path from the stop position to the exit.
    /// Returns `None` for turns that are not possible from `lane`.
    pub fn path(&self, approach: Approach, lane: usize, turn: Turn) -> Option<Vec<Point>> {
        if lane > 1 || (turn == Turn::Left && lane != 0) || (turn == Turn::Right && lane != 1) {
            return None;
        }
        let b = self.box_half_width();
        let x = self.lane_offset(lane);
        let mut pts: Vec<Point> = Vec::new();
        line(&mut pts, [x, -b - self.stop_setback], [x, -b]);
        match turn {
            Turn::Straight => line(&mut pts, [x, -b], [x, b + self.exit_run]),
            Turn::Left => {
                let r = b + x;
                arc(&mut pts, [-b, -b], r, 0.0, FRAC_PI_2);
                line(&mut pts, [-b, -b + r], [-b - self.exit_run, -b + r]);
            }
            Turn::Right => {
                let r = b - x;
                arc(&mut pts, [b, -b], r, core::f64::consts::PI, FRAC_PI_2);
                line(&mut pts, [b, -b + r], [b + self.exit_run, -b + r]);
            }
        }
        pts.dedup();
        Some(
            pts.into_iter()
                .map(|p| rotate(p, approach.index()))
                .collect(),
        )
    }
}

fn line(out: &mut Vec<Point>, a: Point, b: Point) {
    let len = libm::hypot(b[0] - a[0], b[1] - a[1]);
    let n = libm::ceil(len / ARC_STEP).max(1.0) as usize;
    for i in 0..=n {
        let f = i as f64 / n as f64;
        out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
    }
}

/// Arc around `c` from angle `from` towards `from + sweep` (sweep may be
/// negative, angles measured from the +x axis).
fn arc(out: &mut Vec<Point>, c: Point, r: f64, from: f64, sweep_to: f64) {
    let sweep = sweep_to - from;
    let sweep = if from == 0.0 { sweep } else { -sweep };
    let n = libm::ceil((r * sweep.abs()) / ARC_STEP).max(1.0) as usize;
    for i in 0..=n {
        let a = from + sweep * i as f64 / n as f64;
        out.push([c[0] + r * libm::cos(a), c[1] + r * libm::sin(a)]);
    }
}

/// Total length of a polyline.
pub fn polyline_length(pts: &[Point]) -> f64 {
    pts.windows(2)
        .map(|w| libm::hypot(w[1][0] - w[0][0], w[1][1] - w[0][1]))
        .sum()
}

/// Positions reached at constant `speed` every `dt` seconds along `pts`,
/// starting at the first point and ending with the last.
pub fn sample_at_speed(pts: &[Point], speed: f64, dt: f64) -> Vec<Point> {
    let step = speed * dt;
    let total = polyline_length(pts);
    let mut out = Vec::new();
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut target = 0.0;
    while target < total - 1e-9 && seg + 1 < pts.len() {
        let (a, b) = (pts[seg], pts[seg + 1]);
        let len = libm::hypot(b[0] - a[0], b[1] - a[1]);
        if seg_start + len < target {
            seg_start += len;
            seg += 1;
            continue;
        }
        let f = if len > 0.0 {
            (target - seg_start) / len
        } else {
            0.0
        };
        out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
        target += step;
    }
    if let Some(&last) = pts.last() {
        out.push(last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Point, b: Point) -> bool {
        (a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9
    }

    #[test]
    fn south_paths_start_and_end_in_the_right_lanes() {
        let l = Layout::default();
        let left = l.path(Approach::South, 0, Turn::Left).unwrap();
        assert!(close(left[0], [1.75, -11.0]));
        assert!(close(*left.last().unwrap(), [-13.0, 1.75]));
        let right = l.path(Approach::South, 1, Turn::Right).unwrap();
        assert!(close(*right.last().unwrap(), [13.0, -5.25]));
        let straight = l.path(Approach::South, 1, Turn::Straight).unwrap();
        assert!((polyline_length(&straight) - 24.0).abs() < 1e-9);
        assert!(l.path(Approach::South, 1, Turn::Left).is_none());
        assert!(l.path(Approach::South, 0, Turn::Right).is_none());
    }

    #[test]
    fn rotation_maps_approaches() {
        let l = Layout::default();
        // From the west, heading east, the stop position is south of the
        // centre line.
        let w = l.path(Approach::West, 0, Turn::Left).unwrap();
        assert!(close(w[0], [-11.0, -1.75]));
        // Turning left from the west ends heading north.
        assert!(close(*w.last().unwrap(), [1.75, 13.0]));
    }

    #[test]
    fn speed_sampling_spacing() {
        let l = Layout::default();
        let p = l.path(Approach::South, 0, Turn::Straight).unwrap();
        let s = sample_at_speed(&p, 6.0, 0.5);
        assert_eq!(s.len(), 9);
        assert!(close(s[1], [1.75, -8.0]));
    }
}
