use crate::geom::{boxes_intersect, point_in_polygon, OrientedBox, Point2, Pose2};
use crate::vocab::{Trajectory, WAYPOINTS};
use crate::world::{EgoParams, FrameContext, LightState, MapModel, TICK};

use super::comfort::{history_comfort, ComfortLimits};
use super::MetricVector;

/// Below this speed the ego counts as stopped for the not-at-fault rule.
pub const STATIONARY_SPEED: f64 = 0.1;
/// Direction compliance is only checked above this speed.
const DDC_MIN_SPEED: f64 = 0.5;
const LANE_KEEPING_TOLERANCE: f64 = 0.5;
/// Extra look-ahead of the time-to-collision probe, in ticks.
pub const TTC_HORIZON_TICKS: usize = 10;
/// Below this best feasible progress every action gets full progress credit.
pub const MIN_FEASIBLE_PROGRESS: f64 = 5.0;

/// Raw outcome of rolling one plan through one frame, before progress normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEval {
    pub nc: bool,
    pub dac: bool,
    pub ddc: bool,
    pub tlc: bool,
    pub ttc: bool,
    pub lk: bool,
    pub hc: bool,
    /// Route arc length gained over the horizon.
    pub progress: f64,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl PairEval {
    pub fn penalties_ok(&self) -> bool {
        self.nc && self.dac && self.ddc && self.tlc
    }

    /// Metric vector with `ep` normalized by the frame's best feasible progress
    /// (stored at `f32` precision) and `ec` left at 1.
    pub fn metrics(&self, max_feasible_progress: f64) -> MetricVector {
        let ep = if max_feasible_progress < MIN_FEASIBLE_PROGRESS {
            1.0
        } else {
            (self.progress / max_feasible_progress).clamp(0.0, 1.0)
        };
        MetricVector {
            nc: flag(self.nc),
            dac: flag(self.dac),
            ddc: flag(self.ddc),
            tlc: flag(self.tlc),
            ep: ep as f32 as f64,
            ttc: flag(self.ttc),
            lk: flag(self.lk),
            hc: flag(self.hc),
            ec: 1.0,
        }
    }
}

/// Largest progress among the plans that pass every penalty metric.
pub fn max_feasible_progress(evals: &[PairEval]) -> f64 {
    evals
        .iter()
        .filter(|e| e.penalties_ok())
        .map(|e| e.progress)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// World pose of the ego `k` ticks into the plan; past the last waypoint the
/// ego continues at its final speed and heading.
pub fn ego_pose_at(origin: &Pose2, traj: &Trajectory, speeds: &[f64; WAYPOINTS], k: usize) -> Pose2 {
    let w = traj.waypoints();
    if k < WAYPOINTS {
        return origin.compose(&w[k]);
    }
    let last = w[WAYPOINTS - 1];
    let extra = speeds[WAYPOINTS - 1] * TICK * (k - (WAYPOINTS - 1)) as f64;
    let p = last.position() + Point2::from_heading(last.heading) * extra;
    origin.compose(&Pose2::new(p.x, p.y, last.heading))
}

/// Heading agrees with some lane covering the point, or with the nearest lane
/// when none covers it.
pub fn direction_ok(map: &MapModel, p: Point2, heading: f64) -> bool {
    let dir = Point2::from_heading(heading);
    let mut covering = false;
    for lane in &map.lanes {
        let proj = lane.centerline.project(p);
        if proj.distance <= 0.5 * lane.width {
            covering = true;
            if dir.dot(Point2::from_heading(proj.tangent_heading)) >= 0.0 {
                return true;
            }
        }
    }
    if covering {
        return false;
    }
    let nearest = map.nearest_lane(p);
    dir.dot(Point2::from_heading(nearest.tangent_heading)) >= 0.0
}

/// Footprint overlap that counts against the ego: contacts from behind while stopped are exempt.
pub fn at_fault_overlap(ego: &OrientedBox, ego_speed: f64, agent: &OrientedBox) -> bool {
    let reach = ego.radius() + agent.radius();
    if (ego.center.position() - agent.center.position()).norm_sq() > reach * reach {
        return false;
    }
    if !boxes_intersect(ego, agent) {
        return false;
    }
    let behind = ego.center.to_local(agent.center.position()).x < 0.0;
    !(ego_speed < STATIONARY_SPEED && behind)
}

/// Rolls `traj` (in the frame's ego coordinates) through the frame's world for
/// the full horizon and evaluates every per-pair metric.
pub fn simulate_pair(ctx: &FrameContext, traj: &Trajectory, params: &EgoParams, limits: &ComfortLimits) -> PairEval {
    let origin = ctx.frame.ego.pose;
    let speeds = traj.speeds();
    let speed_at = |k: usize| speeds[k.min(WAYPOINTS - 1)];
    let total = WAYPOINTS + TTC_HORIZON_TICKS;
    let poses: Vec<Pose2> = (0..total).map(|k| ego_pose_at(&origin, traj, &speeds, k)).collect();
    let boxes: Vec<OrientedBox> = poses.iter().map(|p| params.footprint(*p)).collect();
    let map = ctx.map;

    let mut nc = true;
    let mut ttc = true;
    for track in ctx.agents {
        for k in 0..WAYPOINTS {
            let state = track.state_at(ctx.frame.tick + k);
            if nc && at_fault_overlap(&boxes[k], speed_at(k), &track.footprint(&state)) {
                nc = false;
            }
            if ttc {
                for j in 1..=TTC_HORIZON_TICKS {
                    let future = state.extrapolate(j as f64 * TICK);
                    if at_fault_overlap(&boxes[k + j], speed_at(k + j), &track.footprint(&future)) {
                        ttc = false;
                        break;
                    }
                }
            }
        }
    }

    let dac = boxes[..WAYPOINTS]
        .iter()
        .all(|b| b.corners().iter().all(|c| point_in_polygon(*c, &map.drivable)));

    let mut ddc = true;
    let mut lk = true;
    for (k, pose) in poses[..WAYPOINTS].iter().enumerate() {
        if ddc && speeds[k] > DDC_MIN_SPEED && !direction_ok(map, pose.position(), pose.heading) {
            ddc = false;
        }
        if lk && map.nearest_lane(pose.position()).lateral.abs() > LANE_KEEPING_TOLERANCE {
            lk = false;
        }
    }

    let mut tlc = true;
    if !map.stop_lines.is_empty() {
        let front = |p: &Pose2| map.route.project(p.transform_point(Point2::new(params.half_length, 0.0))).s;
        let mut prev = front(&poses[0]);
        for (k, pose) in poses[..WAYPOINTS].iter().enumerate().skip(1) {
            let s = front(pose);
            for line in &map.stop_lines {
                if prev < line.s && s >= line.s && line.state_at(ctx.time_at(k)) == LightState::Red {
                    tlc = false;
                }
            }
            prev = s;
        }
    }

    let progress = map.route.project(poses[WAYPOINTS - 1].position()).s - map.route.project(poses[0].position()).s;

    PairEval {
        nc,
        dac,
        ddc,
        tlc,
        ttc,
        lk,
        hc: history_comfort(&ctx.frame.ego, traj, limits),
        progress,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Polygon, Polyline};
    use crate::vocab::{rollout_controls, ControlSegment};
    use crate::world::{AgentState, AgentTrack, EgoState, Frame, Interval, Lane, StopLine};

    fn straight_map(stop_lines: Vec<StopLine>) -> MapModel {
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
            stop_lines,
        }
    }

    fn frame(speed: f64) -> Frame {
        Frame {
            timestamp: 0.0,
            tick: 0,
            ego: EgoState {
                pose: Pose2::default(),
                speed,
                accel: 0.0,
            },
        }
    }

    fn parked(x: f64) -> AgentTrack {
        AgentTrack {
            half_length: 2.2,
            half_width: 1.0,
            states: vec![
                AgentState {
                    pose: Pose2::new(x, 0.0, 0.0),
                    speed: 0.0,
                };
                100
            ],
        }
    }

    fn straight(v: f64, accel: f64) -> Trajectory {
        rollout_controls(v, &[ControlSegment { accel, steer: 0.0 }], &EgoParams::default())
    }

    fn eval(map: &MapModel, agents: &[AgentTrack], f: Frame, t: &Trajectory) -> PairEval {
        let ctx = FrameContext { map, agents, frame: f };
        simulate_pair(&ctx, t, &EgoParams::default(), &ComfortLimits::default())
    }

    #[test]
    fn clean_cruise_passes_everything() {
        let map = straight_map(vec![]);
        let e = eval(&map, &[], frame(3.0), &straight(3.0, 0.0));
        assert!(e.penalties_ok() && e.ttc && e.lk && e.hc, "{e:?}");
        assert!((e.progress - 3.0 * 3.9).abs() < 1e-4);
        assert_eq!(e.metrics(e.progress * 2.0).ep, 0.5);
        assert_eq!(e.metrics(4.0).ep, 1.0);
    }

    #[test]
    fn parked_car_ahead_is_hit() {
        let map = straight_map(vec![]);
        let e = eval(&map, &[parked(5.0)], frame(5.0), &straight(5.0, 0.0));
        assert!(!e.nc && !e.ttc);
    }

    #[test]
    fn rear_contact_while_stopped_is_exempt() {
        let map = straight_map(vec![]);
        let mut tail = parked(-8.0);
        for (k, s) in tail.states.iter_mut().enumerate() {
            s.pose.x = -8.0 + k as f64 * TICK;
            s.speed = 1.0;
        }
        let e = eval(&map, &[tail], frame(0.0), &straight(0.0, 0.0));
        assert!(e.nc && e.ttc, "{e:?}");
    }

    #[test]
    fn leaving_the_road_fails_drivable() {
        let map = straight_map(vec![]);
        let t = rollout_controls(8.0, &[ControlSegment { accel: 0.0, steer: 0.1 }], &EgoParams::default());
        let e = eval(&map, &[], frame(8.0), &t);
        assert!(!e.dac && !e.lk);
    }

    #[test]
    fn red_light_crossing_fails_compliance() {
        let red = StopLine {
            s: 10.0,
            red: vec![Interval { start: 0.0, end: 10.0 }],
        };
        let map = straight_map(vec![red.clone()]);
        assert!(!eval(&map, &[], frame(8.0), &straight(8.0, 0.0)).tlc);
        assert!(eval(&map, &[], frame(0.0), &straight(0.0, 0.0)).tlc);
        let green = StopLine { red: vec![], ..red };
        assert!(eval(&straight_map(vec![green]), &[], frame(8.0), &straight(8.0, 0.0)).tlc);
    }

    #[test]
    fn wrong_way_fails_direction() {
        let mut map = straight_map(vec![]);
        map.lanes[0].centerline = map.lanes[0].centerline.reversed();
        assert!(!eval(&map, &[], frame(5.0), &straight(5.0, 0.0)).ddc);
        assert!(eval(&map, &[], frame(0.0), &straight(0.0, 0.0)).ddc);
    }
}
