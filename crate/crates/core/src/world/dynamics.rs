use serde::{Deserialize, Serialize};

use super::{EgoParams, TICK};
use crate::geom::{normalize_angle, Pose2};
use crate::vocab::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose2,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub accel: f64,
    pub steer: f64,
}

impl Control {
    pub fn clamped(self, params: &EgoParams) -> Control {
        Control {
            accel: self.accel.clamp(params.min_accel, params.max_accel),
            steer: self.steer.clamp(-params.max_steer, params.max_steer),
        }
    }
}

/// One explicit-Euler step of the kinematic bicycle model. Controls are
/// clamped to `params`; speed never goes negative.
pub fn step_ego(state: VehicleState, control: Control, dt: f64, params: &EgoParams) -> VehicleState {
    let c = control.clamped(params);
    let p = state.pose.position() + state.pose.direction() * (state.speed * dt);
    let heading = state.pose.heading + state.speed / params.wheelbase * c.steer.tan() * dt;
    VehicleState {
        pose: Pose2::new(p.x, p.y, heading),
        speed: (state.speed + c.accel * dt).max(0.0),
    }
}

/// Inverts the bicycle model over the first `k_steps` ticks of `traj`, starting
/// from the vehicle's current speed.
pub fn trajectory_to_controls(
    traj: &Trajectory,
    state: VehicleState,
    params: &EgoParams,
    k_steps: usize,
) -> Vec<Control> {
    let wp = traj.waypoints();
    let speeds = traj.speeds();
    let k = k_steps.min(wp.len() - 1);
    let mut current = state.speed;
    (0..k)
        .map(|i| {
            let next = speeds[i + 1];
            let accel = (next - current) / TICK;
            let rate = normalize_angle(wp[i + 1].heading - wp[i].heading) / TICK;
            let steer = (params.wheelbase * rate / current.max(0.1)).atan();
            let c = Control { accel, steer }.clamped(params);
            current = (current + c.accel * TICK).max(0.0);
            c
        })
        .collect()
}
