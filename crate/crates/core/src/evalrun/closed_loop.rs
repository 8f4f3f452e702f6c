use serde::{Deserialize, Serialize};

use super::Planner;
use crate::error::ModelError;
use crate::geom::{point_in_polygon, Point2, Pose2};
use crate::reward::{at_fault_overlap, comfort_ok, hd_score, ComfortLimits, HdWeights, StepMetrics};
use crate::vocab::Trajectory;
use crate::world::{
    step_ego, trajectory_to_controls, EgoParams, EgoState, Family, Frame, FrameContext, ScenarioClip, VehicleState,
    TICK, TICKS_PER_REPLAN,
};

/// Look-ahead of the realized time-to-collision check, in ticks.
const TTC_PROBE_TICKS: usize = 10;
/// Distance short of the route end that counts as arrival.
const ROUTE_DONE_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub max_ticks: usize,
    pub ego: EgoParams,
    pub comfort: ComfortLimits,
    pub hd: HdWeights,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_ticks: 200,
            ego: EgoParams::default(),
            comfort: ComfortLimits::default(),
            hd: HdWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    RouteDone,
    Collision,
    OffRoad,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub clip_id: String,
    pub family: Family,
    pub termination: Termination,
    pub ticks: usize,
    pub route_completion: f64,
    pub hd_score: f64,
    pub steps: Vec<StepMetrics>,
    /// Ego pose after every tick, starting with the initial pose.
    pub poses: Vec<Pose2>,
    pub actions: Vec<usize>,
}

impl EpisodeResult {
    pub fn collided(&self) -> bool {
        self.termination == Termination::Collision
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Drives the ego from the clip's first frame, replanning from `actions` every
/// half second and following each plan through the inverted bicycle model.
pub fn rollout_closed_loop(
    planner: &dyn Planner,
    clip: &ScenarioClip,
    actions: &[Trajectory],
    config: &RolloutConfig,
    key: u64,
) -> Result<EpisodeResult, ModelError> {
    if actions.is_empty() {
        return Err(ModelError::Config("closed loop needs at least one action".into()));
    }
    let start = clip.frames[0];
    let map = &clip.map;
    let route_len = map.route.total_length();
    let s0 = map.route.project(start.ego.pose.position()).s;
    let span = (route_len - s0).max(f64::EPSILON);

    let mut ego = start.ego;
    let mut ticks = 0;
    let mut steps = Vec::new();
    let mut poses = vec![ego.pose];
    let mut chosen = Vec::new();
    let mut controls = Vec::new();

    // two virtual samples behind the start reproduce its speed and acceleration
    let u1 = (ego.speed - ego.accel * TICK).max(0.0);
    let u2 = (u1 - ego.accel * TICK).max(0.0);
    let back = |d: f64| ego.pose.transform_point(Point2::new(-d, 0.0));
    let mut history: Vec<(Point2, f64)> = vec![
        (back(u1 * TICK + u2 * TICK), ego.pose.heading),
        (back(u1 * TICK), ego.pose.heading),
        (ego.pose.position(), ego.pose.heading),
    ];

    let termination = loop {
        if ticks % TICKS_PER_REPLAN == 0 {
            let frame = Frame {
                timestamp: start.timestamp + ticks as f64 * TICK,
                tick: start.tick + ticks,
                ego,
            };
            let ctx = FrameContext {
                map,
                agents: &clip.agents,
                frame,
            };
            let a = planner.plan(&ctx, actions, key ^ ((ticks as u64) << 32))?;
            chosen.push(a);
            let state = VehicleState {
                pose: ego.pose,
                speed: ego.speed,
            };
            controls = trajectory_to_controls(&actions[a], state, &config.ego, TICKS_PER_REPLAN);
            controls.reverse();
        }
        let control = controls.pop().expect("one control per tick between replans");
        let next = step_ego(
            VehicleState {
                pose: ego.pose,
                speed: ego.speed,
            },
            control,
            TICK,
            &config.ego,
        );
        ego = EgoState {
            pose: next.pose,
            speed: next.speed,
            accel: (next.speed - ego.speed) / TICK,
        };
        ticks += 1;
        poses.push(ego.pose);
        history.push((ego.pose.position(), ego.pose.heading));

        let tick = start.tick + ticks;
        let ego_box = config.ego.footprint(ego.pose);
        let corners = ego_box.corners();
        let inside = corners.iter().filter(|c| point_in_polygon(**c, &map.drivable)).count();
        let nc = !clip
            .agents
            .iter()
            .any(|a| at_fault_overlap(&ego_box, ego.speed, &a.footprint(&a.state_at(tick))));
        let ttc = !clip.agents.iter().any(|a| {
            let now = a.state_at(tick);
            (1..=TTC_PROBE_TICKS).any(|j| {
                let dt = j as f64 * TICK;
                let p = ego.pose.position() + ego.pose.direction() * (ego.speed * dt);
                let ahead = config.ego.footprint(Pose2::new(p.x, p.y, ego.pose.heading));
                at_fault_overlap(&ahead, ego.speed, &a.footprint(&now.extrapolate(dt)))
            })
        });
        let window = &history[history.len() - 4..];
        let points: Vec<Point2> = window.iter().map(|h| h.0).collect();
        let headings: Vec<f64> = window.iter().map(|h| h.1).collect();
        steps.push(StepMetrics {
            nc: flag(nc),
            dac: flag(inside == corners.len()),
            ttc: flag(ttc),
            hc: flag(comfort_ok(&points, &headings, &config.comfort)),
        });

        let s = map.route.project(ego.pose.position()).s;
        if !nc {
            break Termination::Collision;
        }
        if inside == 0 {
            break Termination::OffRoad;
        }
        if s >= route_len - ROUTE_DONE_MARGIN {
            break Termination::RouteDone;
        }
        if ticks >= config.max_ticks {
            break Termination::Timeout;
        }
    };

    let route_completion = if termination == Termination::RouteDone {
        1.0
    } else {
        let s = map.route.project(ego.pose.position()).s;
        ((s - s0) / span).clamp(0.0, 1.0)
    };
    Ok(EpisodeResult {
        clip_id: clip.id.clone(),
        family: clip.family,
        termination,
        ticks,
        route_completion,
        hd_score: hd_score(&steps, route_completion, &config.hd),
        steps,
        poses,
        actions: chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalrun::{FixedPlanner, OraclePlanner};
    use crate::geom::{Polygon, Polyline};
    use crate::reward::RewardConfig;
    use crate::vocab::{rollout_controls, ControlSegment};
    use crate::world::{AgentState, AgentTrack, Lane, MapModel};

    fn road() -> MapModel {
        let center = Polyline::new(vec![Point2::new(-30.0, 0.0), Point2::new(150.0, 0.0)]).unwrap();
        MapModel {
            lanes: vec![Lane {
                centerline: center.clone(),
                width: 3.5,
            }],
            drivable: Polygon::new(vec![
                Point2::new(-30.0, -3.0),
                Point2::new(150.0, -3.0),
                Point2::new(150.0, 3.0),
                Point2::new(-30.0, 3.0),
            ])
            .unwrap(),
            route: center.slice(30.0, 130.0).unwrap(),
            stop_lines: vec![],
        }
    }

    fn clip(agents: Vec<AgentTrack>, speed: f64) -> ScenarioClip {
        ScenarioClip {
            id: "t".into(),
            family: Family::Straight,
            rng_seed: 0,
            map: road(),
            agents,
            frames: vec![Frame {
                timestamp: 0.0,
                tick: 0,
                ego: EgoState {
                    pose: Pose2::default(),
                    speed,
                    accel: 0.0,
                },
            }],
        }
    }

    fn actions(v: f64) -> Vec<Trajectory> {
        let p = EgoParams::default();
        let roll = |a: f64, s: f64| rollout_controls(v, &[ControlSegment { accel: a, steer: s }], &p);
        vec![roll(-4.0, 0.0), roll(0.0, 0.0), roll(0.0, 0.2), roll(1.0, 0.0)]
    }

    #[test]
    fn cruise_on_empty_road_completes_the_route() {
        let c = clip(vec![], 10.0);
        let r = rollout_closed_loop(&FixedPlanner(1), &c, &actions(10.0), &RolloutConfig::default(), 0).unwrap();
        assert_eq!(r.termination, Termination::RouteDone);
        assert_eq!(r.route_completion, 1.0);
        assert!((r.hd_score - 1.0).abs() < 1e-12, "{}", r.hd_score);
        assert_eq!(r.poses.len(), r.ticks + 1);
        assert!((99..=101).contains(&r.ticks));
    }

    #[test]
    fn oracle_on_empty_road_scores_full() {
        let c = clip(vec![], 10.0);
        let oracle = OraclePlanner {
            params: EgoParams::default(),
            reward: RewardConfig::default(),
        };
        let r = rollout_closed_loop(&oracle, &c, &actions(10.0), &RolloutConfig::default(), 0).unwrap();
        assert_eq!(r.termination, Termination::RouteDone);
        assert!((r.hd_score - 1.0).abs() < 1e-12, "{}", r.hd_score);
    }

    #[test]
    fn driving_into_a_parked_car_ends_in_collision() {
        let parked = AgentTrack {
            half_length: 2.2,
            half_width: 1.0,
            states: vec![
                AgentState {
                    pose: Pose2::new(30.0, 0.0, 0.0),
                    speed: 0.0,
                };
                300
            ],
        };
        let c = clip(vec![parked], 10.0);
        let r = rollout_closed_loop(&FixedPlanner(1), &c, &actions(10.0), &RolloutConfig::default(), 0).unwrap();
        assert_eq!(r.termination, Termination::Collision);
        assert!(r.steps.iter().any(|s| s.nc == 0.0));
        assert!(r.route_completion < 0.3);
    }

    #[test]
    fn steering_off_the_road_ends_off_road() {
        let c = clip(vec![], 10.0);
        let r = rollout_closed_loop(&FixedPlanner(2), &c, &actions(10.0), &RolloutConfig::default(), 0).unwrap();
        assert_eq!(r.termination, Termination::OffRoad);
        assert!(r.steps.iter().any(|s| s.dac == 0.0));
    }

    #[test]
    fn standing_still_times_out() {
        let c = clip(vec![], 0.0);
        let config = RolloutConfig {
            max_ticks: 50,
            ..RolloutConfig::default()
        };
        let r = rollout_closed_loop(&FixedPlanner(0), &c, &actions(0.0), &config, 0).unwrap();
        assert_eq!(r.termination, Termination::Timeout);
        assert_eq!(r.ticks, 50);
        assert_eq!(r.route_completion, 0.0);
        assert_eq!(r.hd_score, 0.0);
    }
}
