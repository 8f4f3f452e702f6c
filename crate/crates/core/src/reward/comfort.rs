use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::geom::{normalize_angle, Point2};
use crate::vocab::{Trajectory, WAYPOINTS};
use crate::world::{EgoState, TICK};

/// Bounds on the kinematic profile of a single plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortLimits {
    pub lon_accel: f64,
    pub lat_accel: f64,
    pub jerk: f64,
    pub yaw_rate: f64,
    pub yaw_accel: f64,
}

impl Default for ComfortLimits {
    fn default() -> Self {
        Self {
            lon_accel: 2.4,
            lat_accel: 4.89,
            jerk: 8.37,
            yaw_rate: 0.95,
            yaw_accel: 1.93,
        }
    }
}

/// Bounds on the difference between two time-aligned plan profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcThresholds {
    pub accel: f64,
    pub jerk: f64,
    pub yaw_rate: f64,
    pub yaw_accel: f64,
}

impl Default for EcThresholds {
    fn default() -> Self {
        Self {
            accel: 1.0,
            jerk: 2.0,
            yaw_rate: 0.2,
            yaw_accel: 0.4,
        }
    }
}

/// Checks every finite-difference derivative along a pose sequence sampled at 10 Hz.
///
/// Accelerations are projected on the heading at the middle sample; jerk is the
/// magnitude of the acceleration vector difference.
pub fn comfort_ok(points: &[Point2], headings: &[f64], limits: &ComfortLimits) -> bool {
    debug_assert_eq!(points.len(), headings.len());
    let n = points.len();
    let vel: Vec<Point2> = (0..n.saturating_sub(1)).map(|i| (points[i + 1] - points[i]) * (1.0 / TICK)).collect();
    let acc: Vec<Point2> = (0..vel.len().saturating_sub(1))
        .map(|i| (vel[i + 1] - vel[i]) * (1.0 / TICK))
        .collect();
    for (i, a) in acc.iter().enumerate() {
        let dir = Point2::from_heading(headings[i + 1]);
        if a.dot(dir).abs() > limits.lon_accel || dir.cross(*a).abs() > limits.lat_accel {
            return false;
        }
    }
    for w in acc.windows(2) {
        if ((w[1] - w[0]) * (1.0 / TICK)).norm() > limits.jerk {
            return false;
        }
    }
    let yaw: Vec<f64> = headings.windows(2).map(|w| normalize_angle(w[1] - w[0]) / TICK).collect();
    if yaw.iter().any(|r| r.abs() > limits.yaw_rate) {
        return false;
    }
    yaw.windows(2).all(|w| ((w[1] - w[0]) / TICK).abs() <= limits.yaw_accel)
}

/// Comfort of a plan appended to two virtual history samples that reproduce the
/// ego's current speed and acceleration along its heading.
pub fn history_comfort(ego: &EgoState, traj: &Trajectory, limits: &ComfortLimits) -> bool {
    let u1 = (ego.speed - ego.accel * TICK).max(0.0);
    let u2 = (u1 - ego.accel * TICK).max(0.0);
    let p1 = Point2::new(-u1 * TICK, 0.0);
    let p2 = Point2::new(p1.x - u2 * TICK, 0.0);
    let mut points = Vec::with_capacity(WAYPOINTS + 2);
    let mut headings = Vec::with_capacity(WAYPOINTS + 2);
    points.extend([p2, p1]);
    headings.extend([0.0, 0.0]);
    for w in traj.waypoints() {
        points.push(w.position());
        headings.push(w.heading);
    }
    comfort_ok(&points, &headings, limits)
}

/// Frame-independent kinematic profile of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ComfortProfile {
    pub accel: Vec<f64>,
    pub jerk: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_accel: Vec<f64>,
}

impl ComfortProfile {
    pub fn of(traj: &Trajectory) -> Self {
        let w = traj.waypoints();
        let speed: Vec<f64> = w.windows(2).map(|p| (p[1].position() - p[0].position()).norm() / TICK).collect();
        let accel: Vec<f64> = speed.windows(2).map(|v| (v[1] - v[0]) / TICK).collect();
        let jerk = accel.windows(2).map(|a| (a[1] - a[0]) / TICK).collect();
        let yaw_rate: Vec<f64> = w.windows(2).map(|p| normalize_angle(p[1].heading - p[0].heading) / TICK).collect();
        let yaw_accel = yaw_rate.windows(2).map(|r| (r[1] - r[0]) / TICK).collect();
        Self {
            accel,
            jerk,
            yaw_rate,
            yaw_accel,
        }
    }

    fn channels(&self) -> [&[f64]; 4] {
        [&self.accel, &self.jerk, &self.yaw_rate, &self.yaw_accel]
    }
}

fn within(a: &[f64], b: &[f64], shift: usize, limit: f64) -> bool {
    a.iter().skip(shift).zip(b).all(|(x, y)| (x - y).abs() <= limit)
}

/// Compares `prev` advanced by `shift` ticks against `cur` over their overlap.
fn aligned(prev: &ComfortProfile, cur: &ComfortProfile, shift: usize, t: &EcThresholds) -> bool {
    let limits = [t.accel, t.jerk, t.yaw_rate, t.yaw_accel];
    prev.channels()
        .iter()
        .zip(cur.channels())
        .zip(limits)
        .all(|((a, b), l)| within(a, b, shift, l))
}

/// True when two time-aligned profiles agree within the thresholds. Symmetric.
pub fn profiles_consistent(a: &ComfortProfile, b: &ComfortProfile, t: &EcThresholds) -> bool {
    aligned(a, b, 0, t)
}

/// Whether `cur`, planned `shift_ticks` after `prev`, continues its kinematics.
pub fn extended_comfort_pair(prev: &Trajectory, cur: &Trajectory, shift_ticks: usize, t: &EcThresholds) -> bool {
    aligned(&ComfortProfile::of(prev), &ComfortProfile::of(cur), shift_ticks, t)
}

/// Pairwise plan-consistency over a fixed action list, computed one row at a time on demand.
#[derive(Debug)]
pub struct EcIndicator {
    profiles: Vec<ComfortProfile>,
    thresholds: EcThresholds,
    rows: Vec<OnceLock<Vec<bool>>>,
}

impl EcIndicator {
    pub fn new(actions: &[Trajectory], thresholds: EcThresholds) -> Self {
        Self {
            profiles: actions.iter().map(ComfortProfile::of).collect(),
            thresholds,
            rows: (0..actions.len()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    fn row(&self, prev: usize) -> &[bool] {
        self.rows[prev].get_or_init(|| {
            self.profiles
                .iter()
                .map(|p| profiles_consistent(&self.profiles[prev], p, &self.thresholds))
                .collect()
        })
    }

    pub fn consistent(&self, prev: usize, cur: usize) -> bool {
        self.row(prev)[cur]
    }

    pub fn violated(&self, prev: usize, cur: usize) -> bool {
        !self.consistent(prev, cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{rollout_controls, sample_candidates, ControlSegment};
    use crate::world::{EgoParams, TICKS_PER_REPLAN};
    use proptest::prelude::*;

    fn roll(v: f64, accel: f64, steer: f64) -> Trajectory {
        rollout_controls(v, &[ControlSegment { accel, steer }], &EgoParams::default())
    }

    #[test]
    fn continuation_is_consistent() {
        let prev = roll(8.0, 0.0, 0.0);
        let cur = roll(8.0, 0.0, 0.0);
        assert!(extended_comfort_pair(&prev, &cur, TICKS_PER_REPLAN, &EcThresholds::default()));
        let prev = roll(8.0, -1.0, 0.02);
        let cur = roll(7.5, -1.0, 0.02);
        assert!(extended_comfort_pair(&prev, &cur, TICKS_PER_REPLAN, &EcThresholds::default()));
    }

    #[test]
    fn cruise_then_hard_brake_violates() {
        let prev = roll(8.0, 0.0, 0.0);
        let cur = roll(8.0, -4.0, 0.0);
        let p = ComfortProfile::of(&cur);
        assert!((p.accel[3] + 4.0).abs() < 1e-3);
        assert!(!extended_comfort_pair(&prev, &cur, TICKS_PER_REPLAN, &EcThresholds::default()));
    }

    #[test]
    fn history_comfort_examples() {
        let limits = ComfortLimits::default();
        let ego = EgoState {
            pose: Default::default(),
            speed: 8.0,
            accel: 0.0,
        };
        assert!(history_comfort(&ego, &roll(8.0, 0.0, 0.0), &limits));
        // dropping 3 m/s in one tick
        assert!(!history_comfort(&ego, &roll(5.0, 0.0, 0.0), &limits));
        // sustained braking beyond the longitudinal bound
        assert!(!history_comfort(&ego, &roll(8.0, -3.0, 0.0), &limits));
        let braking = EgoState { accel: -1.0, ..ego };
        assert!(history_comfort(&braking, &roll(8.0, -1.0, 0.0), &limits));
    }

    proptest! {
        #[test]
        fn aligned_comparison_is_symmetric(i in 0usize..60, j in 0usize..60) {
            let c = sample_candidates(60, &EgoParams::default(), 11);
            let t = EcThresholds::default();
            let (a, b) = (ComfortProfile::of(&c[i]), ComfortProfile::of(&c[j]));
            prop_assert_eq!(profiles_consistent(&a, &b, &t), profiles_consistent(&b, &a, &t));
            prop_assert!(profiles_consistent(&a, &a, &t));
            prop_assert_eq!(extended_comfort_pair(&c[i], &c[j], 0, &t), extended_comfort_pair(&c[j], &c[i], 0, &t));
        }
    }
}
