//! The synthetic driving world: maps, scripted agents, logged ego frames,
//! scenario generation, dataset persistence and ego dynamics.

mod dataset;
mod dynamics;
mod generate;

pub use dataset::{read_dataset, write_dataset, Dataset, FrameRef, SCHEMA_VERSION};
pub use dynamics::{step_ego, trajectory_to_controls, Control, VehicleState};
pub use generate::{generate_dataset, FamilyCounts, GeneratorConfig, Range};

use serde::{Deserialize, Serialize};

use crate::geom::{point_in_polygon, OrientedBox, Point2, Polygon, Polyline, Pose2};

/// Simulation tick in seconds (10 Hz).
pub const TICK: f64 = 0.1;
/// Seconds between consecutive frames of a clip, and between closed-loop replans.
pub const REPLAN_INTERVAL: f64 = 0.5;
pub const TICKS_PER_REPLAN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Straight,
    Curve,
    IntersectionLight,
    LeadBrake,
    OncomingOvertake,
    ParkedObstruction,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Straight,
        Family::Curve,
        Family::IntersectionLight,
        Family::LeadBrake,
        Family::OncomingOvertake,
        Family::ParkedObstruction,
    ];
}

/// Ego vehicle footprint and actuation limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoParams {
    pub half_length: f64,
    pub half_width: f64,
    pub wheelbase: f64,
    pub max_steer: f64,
    pub min_accel: f64,
    pub max_accel: f64,
}

impl Default for EgoParams {
    fn default() -> Self {
        Self {
            half_length: 2.4,
            half_width: 1.0,
            wheelbase: 3.0,
            max_steer: 0.6,
            min_accel: -4.0,
            max_accel: 3.0,
        }
    }
}

impl EgoParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [self.half_length, self.half_width, self.wheelbase, self.max_steer, self.max_accel];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.min_accel < 0.0) {
            return Err(format!("ego params must be positive (min_accel negative): {self:?}"));
        }
        if self.max_steer >= std::f64::consts::FRAC_PI_2 {
            return Err(format!("max_steer {} must be below pi/2", self.max_steer));
        }
        Ok(())
    }

    pub fn footprint(&self, pose: Pose2) -> OrientedBox {
        OrientedBox {
            center: pose,
            half_length: self.half_length,
            half_width: self.half_width,
        }
    }

    /// Largest curvature the steering limit allows.
    pub fn max_curvature(&self) -> f64 {
        self.max_steer.tan() / self.wheelbase
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    /// Centerline in the lane's direction of travel.
    pub centerline: Polyline,
    pub width: f64,
}

/// Half-open time interval `[start, end)` in clip seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LightState {
    Red,
    Green,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    /// Arc length along the route.
    pub s: f64,
    /// Red phases; the light is green otherwise.
    pub red: Vec<Interval>,
}

impl StopLine {
    pub fn state_at(&self, t: f64) -> LightState {
        if self.red.iter().any(|iv| t >= iv.start && t < iv.end) {
            LightState::Red
        } else {
            LightState::Green
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapModel {
    pub lanes: Vec<Lane>,
    pub drivable: Polygon,
    pub route: Polyline,
    pub stop_lines: Vec<StopLine>,
}

/// Nearest lane to a point, by absolute lateral distance.
#[derive(Debug, Clone, Copy)]
pub struct LaneMatch {
    pub lane: usize,
    pub lateral: f64,
    pub tangent_heading: f64,
}

impl MapModel {
    pub fn validate(&self, ego: &EgoParams) -> Result<(), String> {
        if let Some(p) = self.route.points().iter().find(|p| !point_in_polygon(**p, &self.drivable)) {
            return Err(format!("route vertex {p:?} outside drivable area"));
        }
        if let Some(l) = self.lanes.iter().find(|l| l.width <= 2.0 * ego.half_width) {
            return Err(format!("lane width {} not wider than the vehicle", l.width));
        }
        if self.lanes.is_empty() {
            return Err("map has no lanes".into());
        }
        Ok(())
    }

    pub fn nearest_lane(&self, p: Point2) -> LaneMatch {
        let mut best: Option<(f64, LaneMatch)> = None;
        for (i, lane) in self.lanes.iter().enumerate() {
            let proj = lane.centerline.project(p);
            if best.as_ref().is_none_or(|(d, _)| proj.distance < *d) {
                best = Some((
                    proj.distance,
                    LaneMatch {
                        lane: i,
                        lateral: proj.lateral,
                        tangent_heading: proj.tangent_heading,
                    },
                ));
            }
        }
        best.expect("map has lanes").1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pose: Pose2,
    pub speed: f64,
}

impl AgentState {
    /// Constant-velocity extrapolation `dt` seconds ahead.
    pub fn extrapolate(&self, dt: f64) -> AgentState {
        let p = self.pose.position() + self.pose.direction() * (self.speed * dt);
        AgentState {
            pose: Pose2::new(p.x, p.y, self.pose.heading),
            speed: self.speed,
        }
    }
}

/// A scripted agent: footprint plus one state per 0.1 s tick from clip start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub half_length: f64,
    pub half_width: f64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    /// State at a tick; ticks past the end hold the last state.
    pub fn state_at(&self, tick: usize) -> AgentState {
        self.states[tick.min(self.states.len() - 1)]
    }

    pub fn footprint(&self, state: &AgentState) -> OrientedBox {
        OrientedBox {
            center: state.pose,
            half_length: self.half_length,
            half_width: self.half_width,
        }
    }

    /// Checks the kinematic-consistency invariant, returning the first offending tick.
    pub fn check_consistency(&self) -> Result<(), usize> {
        for (i, w) in self.states.windows(2).enumerate() {
            let disp = (w[1].pose.position() - w[0].pose.position()).norm();
            if disp > w[0].speed.max(w[1].speed) * TICK + 0.5 {
                return Err(i);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2,
    pub speed: f64,
    pub accel: f64,
}

/// One logged world state. Agents and lights are resolved through the clip at `tick`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestamp: f64,
    pub tick: usize,
    pub ego: EgoState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioClip {
    pub id: String,
    pub family: Family,
    pub rng_seed: u64,
    pub map: MapModel,
    pub agents: Vec<AgentTrack>,
    pub frames: Vec<Frame>,
}

impl ScenarioClip {
    pub fn context(&self, frame: usize) -> FrameContext<'_> {
        FrameContext {
            map: &self.map,
            agents: &self.agents,
            frame: self.frames[frame],
        }
    }

    /// Ticks covered by every agent track.
    pub fn track_ticks(&self) -> usize {
        self.agents.iter().map(|a| a.states.len()).min().unwrap_or(usize::MAX)
    }
}

/// Everything needed to evaluate or rasterize one world state.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub map: &'a MapModel,
    pub agents: &'a [AgentTrack],
    pub frame: Frame,
}

impl FrameContext<'_> {
    /// Agent footprints and states `offset` ticks after this frame.
    pub fn agents_at(&self, offset: usize) -> impl Iterator<Item = (&AgentTrack, AgentState)> + '_ {
        let tick = self.frame.tick + offset;
        self.agents.iter().map(move |a| (a, a.state_at(tick)))
    }

    /// Clip time `offset` ticks after this frame.
    pub fn time_at(&self, offset: usize) -> f64 {
        self.frame.timestamp + offset as f64 * TICK
    }
}
