//! Shared fixtures and a deliberately naive reward oracle.
#![allow(dead_code)]

pub mod grad;

use trajscore::geom::{normalize_angle, Point2, Pose2};
use trajscore::reward::ComfortLimits;
use trajscore::vocab::{Trajectory, WAYPOINTS};
use trajscore::world::{AgentTrack, EgoParams, FrameContext, MapModel, TICK};

const EXTRA: usize = 10;

/// Flags in metric order (nc, dac, ddc, tlc, ttc, lk, hc) plus route progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaivePair {
    pub nc: bool,
    pub dac: bool,
    pub ddc: bool,
    pub tlc: bool,
    pub ttc: bool,
    pub lk: bool,
    pub hc: bool,
    pub progress: f64,
}

impl NaivePair {
    fn feasible(&self) -> bool {
        self.nc && self.dac && self.ddc && self.tlc
    }
}

fn speed_of(traj: &Trajectory, k: usize) -> f64 {
    let w = traj.waypoints();
    let i = k.min(WAYPOINTS - 2);
    (w[i + 1].position() - w[i].position()).norm() / TICK
}

fn world_pose(origin: &Pose2, traj: &Trajectory, k: usize) -> Pose2 {
    let w = traj.waypoints();
    if k < WAYPOINTS {
        return origin.compose(&w[k]);
    }
    let last = w[WAYPOINTS - 1];
    let d = speed_of(traj, WAYPOINTS - 1) * TICK * (k - (WAYPOINTS - 1)) as f64;
    let p = last.position() + Point2::new(last.heading.cos(), last.heading.sin()) * d;
    origin.compose(&Pose2::new(p.x, p.y, last.heading))
}

fn corners(center: &Pose2, hl: f64, hw: f64) -> Vec<Point2> {
    let (s, c) = center.heading.sin_cos();
    let mut out = Vec::new();
    for (lx, ly) in [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)] {
        out.push(Point2::new(center.x + lx * c - ly * s, center.y + lx * s + ly * c));
    }
    out
}

/// Separating-axis test over the edge directions of both rectangles.
fn overlap(a: &[Point2], b: &[Point2]) -> bool {
    for poly in [a, b] {
        for i in 0..2 {
            let e = poly[i + 1] - poly[i];
            let axis = e * (1.0 / e.norm());
            let range = |pts: &[Point2]| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for p in pts {
                    lo = lo.min(p.dot(axis));
                    hi = hi.max(p.dot(axis));
                }
                (lo, hi)
            };
            let (alo, ahi) = range(a);
            let (blo, bhi) = range(b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

fn counts_against_ego(ego: &Pose2, ego_speed: f64, params: &EgoParams, agent: &Pose2, track: &AgentTrack) -> bool {
    let a = corners(ego, params.half_length, params.half_width);
    let b = corners(agent, track.half_length, track.half_width);
    if !overlap(&a, &b) {
        return false;
    }
    let rel = Point2::new(agent.x - ego.x, agent.y - ego.y);
    let ahead = rel.dot(Point2::new(ego.heading.cos(), ego.heading.sin()));
    ego_speed >= 0.1 || ahead >= 0.0
}

fn seg_dist(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Crossing number with boundary points counted inside.
fn inside(p: Point2, ring: &[Point2]) -> bool {
    let n = ring.len();
    let mut crossings = 0;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if seg_dist(p, a, b) <= 1e-9 {
            return true;
        }
        let (lo, hi) = if a.y <= b.y { (a, b) } else { (b, a) };
        if p.y >= lo.y && p.y < hi.y {
            let x = lo.x + (p.y - lo.y) * (hi.x - lo.x) / (hi.y - lo.y);
            if p.x < x {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

/// (distance, arc length, signed lateral, tangent heading) of the closest foot point.
fn project(p: Point2, pts: &[Point2]) -> (f64, f64, f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    let mut cum = 0.0;
    for i in 0..pts.len() - 1 {
        let seg = pts[i + 1] - pts[i];
        let next = cum + seg.norm();
        let len = next - cum;
        let t = ((p - pts[i]).dot(seg) / seg.norm_sq()).clamp(0.0, 1.0);
        let foot = pts[i] + seg * t;
        let d = (p - foot).norm();
        if d < best.0 {
            let tan = seg * (1.0 / len);
            best = (d, cum + t * len, tan.cross(p - foot), tan.y.atan2(tan.x));
        }
        cum = next;
    }
    best
}

fn nearest_lane(map: &MapModel, p: Point2) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for lane in &map.lanes {
        let (d, _, lat, h) = project(p, lane.centerline.points());
        if d < best.0 {
            best = (d, lat, h);
        }
    }
    (best.1, best.2)
}

fn direction_ok(map: &MapModel, pose: &Pose2) -> bool {
    let dir = Point2::new(pose.heading.cos(), pose.heading.sin());
    let mut covered = false;
    let mut agrees = false;
    for lane in &map.lanes {
        let (d, _, _, h) = project(pose.position(), lane.centerline.points());
        if d <= 0.5 * lane.width {
            covered = true;
            agrees |= dir.dot(Point2::new(h.cos(), h.sin())) >= 0.0;
        }
    }
    if covered {
        return agrees;
    }
    let (_, h) = nearest_lane(map, pose.position());
    dir.dot(Point2::new(h.cos(), h.sin())) >= 0.0
}

fn comfort(ctx: &FrameContext, traj: &Trajectory, lim: &ComfortLimits) -> bool {
    let ego = ctx.frame.ego;
    let u1 = (ego.speed - ego.accel * TICK).max(0.0);
    let u2 = (u1 - ego.accel * TICK).max(0.0);
    let mut pts = vec![Point2::new(-u1 * TICK - u2 * TICK, 0.0), Point2::new(-u1 * TICK, 0.0)];
    let mut hs = vec![0.0, 0.0];
    for w in traj.waypoints() {
        pts.push(w.position());
        hs.push(w.heading);
    }
    let n = pts.len();
    let vel = |i: usize| (pts[i + 1] - pts[i]) * (1.0 / TICK);
    let acc = |i: usize| (vel(i + 1) - vel(i)) * (1.0 / TICK);
    let yaw = |i: usize| normalize_angle(hs[i + 1] - hs[i]) / TICK;
    let mut ok = true;
    for i in 0..n - 2 {
        let a = acc(i);
        let dir = Point2::new(hs[i + 1].cos(), hs[i + 1].sin());
        ok &= a.dot(dir).abs() <= lim.lon_accel && dir.cross(a).abs() <= lim.lat_accel;
    }
    for i in 0..n - 3 {
        ok &= ((acc(i + 1) - acc(i)) * (1.0 / TICK)).norm() <= lim.jerk;
    }
    for i in 0..n - 1 {
        ok &= yaw(i).abs() <= lim.yaw_rate;
    }
    for i in 0..n - 2 {
        ok &= ((yaw(i + 1) - yaw(i)) / TICK).abs() <= lim.yaw_accel;
    }
    ok
}

/// Evaluates one plan tick by tick without early exits or pruning.
pub fn naive_pair(ctx: &FrameContext, traj: &Trajectory, params: &EgoParams, lim: &ComfortLimits) -> NaivePair {
    let origin = ctx.frame.ego.pose;
    let map = ctx.map;
    let poses: Vec<Pose2> = (0..WAYPOINTS + EXTRA).map(|k| world_pose(&origin, traj, k)).collect();
    let mut r = NaivePair {
        nc: true,
        dac: true,
        ddc: true,
        tlc: true,
        ttc: true,
        lk: true,
        hc: comfort(ctx, traj, lim),
        progress: 0.0,
    };
    for k in 0..WAYPOINTS {
        for track in ctx.agents {
            let st = track.states[(ctx.frame.tick + k).min(track.states.len() - 1)];
            if counts_against_ego(&poses[k], speed_of(traj, k), params, &st.pose, track) {
                r.nc = false;
            }
            for j in 1..=EXTRA {
                let dt = j as f64 * TICK;
                let moved = st.pose.position() + Point2::new(st.pose.heading.cos(), st.pose.heading.sin()) * (st.speed * dt);
                let future = Pose2::new(moved.x, moved.y, st.pose.heading);
                if counts_against_ego(&poses[k + j], speed_of(traj, k + j), params, &future, track) {
                    r.ttc = false;
                }
            }
        }
        for c in corners(&poses[k], params.half_length, params.half_width) {
            r.dac &= inside(c, map.drivable.ring());
        }
        if speed_of(traj, k) > 0.5 && !direction_ok(map, &poses[k]) {
            r.ddc = false;
        }
        if nearest_lane(map, poses[k].position()).0.abs() > 0.5 {
            r.lk = false;
        }
        if k > 0 {
            let front = |p: &Pose2| {
                let f = p.transform_point(Point2::new(params.half_length, 0.0));
                project(f, map.route.points()).1
            };
            let (s0, s1) = (front(&poses[k - 1]), front(&poses[k]));
            let t = ctx.frame.timestamp + k as f64 * TICK;
            for line in &map.stop_lines {
                let red = line.red.iter().any(|iv| t >= iv.start && t < iv.end);
                if s0 < line.s && s1 >= line.s && red {
                    r.tlc = false;
                }
            }
        }
    }
    let s = |p: &Pose2| project(p.position(), map.route.points()).1;
    r.progress = s(&poses[WAYPOINTS - 1]) - s(&poses[0]);
    r
}

/// All nine metrics of `actions[a]` in table order, `ec` left at 1.
pub fn naive_metrics(
    ctx: &FrameContext,
    actions: &[Trajectory],
    a: usize,
    params: &EgoParams,
    lim: &ComfortLimits,
) -> [f32; 9] {
    let all: Vec<NaivePair> = actions.iter().map(|t| naive_pair(ctx, t, params, lim)).collect();
    let mut best = f64::NEG_INFINITY;
    for e in &all {
        if e.feasible() && e.progress > best {
            best = e.progress;
        }
    }
    let e = all[a];
    let ep = if best < 5.0 { 1.0 } else { (e.progress / best).clamp(0.0, 1.0) };
    let f = |b: bool| if b { 1.0 } else { 0.0 };
    [f(e.nc), f(e.dac), f(e.ddc), f(e.tlc), ep as f32, f(e.ttc), f(e.lk), f(e.hc), 1.0]
}

