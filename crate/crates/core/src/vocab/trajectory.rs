use std::f64::consts::PI;

use crate::error::VocabError;
use crate::geom::{normalize_angle, Pose2};
use crate::world::{EgoParams, TICK};

/// Waypoints per trajectory: 4 s at 10 Hz.
pub const WAYPOINTS: usize = 40;

/// A planned ego motion in the ego frame; waypoint `i` is reached at `i * 0.1` s.
///
/// Coordinates are stored at `f32` precision so the binary vocabulary format
/// round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Pose2>,
}

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Rounds a heading to `f32` without leaving `(-pi, pi]`.
fn f32_heading(h: f64) -> f64 {
    let mut r = h as f32;
    if r as f64 > PI {
        r = f32::from_bits(r.to_bits() - 1);
    }
    if r as f64 <= -PI {
        r = -f32::from_bits((PI as f32).to_bits() - 1);
    }
    r as f64
}

impl Trajectory {
    /// Builds a trajectory, rounding coordinates to `f32`. Only the waypoint count
    /// is checked here; see [`Trajectory::validate`] for the kinematic invariants.
    pub fn new(waypoints: Vec<Pose2>) -> Result<Self, VocabError> {
        if waypoints.len() != WAYPOINTS {
            return Err(VocabError::InvalidTrajectory(format!(
                "expected {WAYPOINTS} waypoints, got {}",
                waypoints.len()
            )));
        }
        let waypoints = waypoints
            .into_iter()
            .map(|p| Pose2 {
                x: f32_exact(p.x),
                y: f32_exact(p.y),
                heading: f32_heading(normalize_angle(p.heading)),
            })
            .collect();
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[Pose2] {
        &self.waypoints
    }

    /// Speed at each waypoint from the displacement to the next one; the last
    /// waypoint repeats the previous value.
    pub fn speeds(&self) -> [f64; WAYPOINTS] {
        let mut v = [0.0; WAYPOINTS];
        for i in 0..WAYPOINTS - 1 {
            v[i] = (self.waypoints[i + 1].position() - self.waypoints[i].position()).norm() / TICK;
        }
        v[WAYPOINTS - 1] = v[WAYPOINTS - 2];
        v
    }

    /// Arc length travelled over the horizon.
    pub fn path_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].position() - w[0].position()).norm())
            .sum()
    }

    pub fn validate(&self, params: &EgoParams) -> Result<(), VocabError> {
        let bad = |m: String| Err(VocabError::InvalidTrajectory(m));
        if self.waypoints.len() != WAYPOINTS {
            return bad(format!("{} waypoints", self.waypoints.len()));
        }
        if self.waypoints[0].position().norm() > 0.3 {
            return bad(format!("waypoint 0 is {:?}, not near the origin", self.waypoints[0]));
        }
        let speeds = self.speeds();
        let kmax = params.max_curvature();
        for i in 0..WAYPOINTS - 1 {
            let dh = normalize_angle(self.waypoints[i + 1].heading - self.waypoints[i].heading).abs();
            let limit = speeds[i] * kmax * TICK + 1e-5;
            if dh > limit {
                return bad(format!("heading change {dh} at tick {i} exceeds {limit}"));
            }
        }
        if self.waypoints.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.heading.is_finite())) {
            return bad("non-finite waypoint".into());
        }
        Ok(())
    }

    /// Mirror image across the ego's longitudinal axis.
    pub fn mirrored(&self) -> Trajectory {
        Trajectory::new(self.waypoints.iter().map(|p| Pose2::new(p.x, -p.y, -p.heading)).collect())
            .expect("same waypoint count")
    }

    /// Flattened `(x, y)` pairs.
    pub fn positions(&self) -> Vec<f64> {
        self.waypoints.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// Root-mean-square of the per-waypoint Euclidean position distances.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let sq: f64 = a
        .waypoints
        .iter()
        .zip(&b.waypoints)
        .map(|(p, q)| (p.position() - q.position()).norm_sq())
        .sum();
    (sq / WAYPOINTS as f64).sqrt()
}
