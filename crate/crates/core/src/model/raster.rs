use ndarray::{Array2, Array3};

use crate::geom::{point_in_polygon, Point2};
use crate::vocab::Trajectory;
use crate::world::{FrameContext, LightState};

pub const CHANNELS: usize = 6;
/// Side of the square scene window in meters.
pub const SCENE_EXTENT: f64 = 64.0;
/// Meters of the window behind the ego; the window center lies 24 m ahead.
pub const SCENE_BEHIND: f64 = 8.0;
pub const TOKEN_DIM: usize = 32;

const ROUTE_HALF_WIDTH: f64 = 1.5;
const AGENT_LOOKAHEAD: f64 = 1.0;
const SPEED_SCALE: f64 = 15.0;
/// Stop-line band along the route: from this far before the line to `STOP_AFTER` past it.
const STOP_BEFORE: f64 = 1.0;
const STOP_AFTER: f64 = 0.5;
const STOP_HALF_WIDTH: f64 = 2.0;

/// Ego-aligned bird's-eye grid. Row `r` spans forward distance, column `c` lateral.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterScene {
    /// `(CHANNELS, grid, grid)`, every value in `[0, 1]`.
    pub data: Array3<f32>,
}

impl RasterScene {
    pub fn grid(&self) -> usize {
        self.data.shape()[1]
    }

    /// Ego-frame coordinates of a cell center.
    pub fn cell_center(grid: usize, row: usize, col: usize) -> Point2 {
        let cell = SCENE_EXTENT / grid as f64;
        Point2::new(
            -SCENE_BEHIND + (row as f64 + 0.5) * cell,
            -0.5 * SCENE_EXTENT + (col as f64 + 0.5) * cell,
        )
    }
}

/// Fraction of a cell covered by a region whose boundary lies `inside` meters
/// from the cell center (positive inside), with a one-cell linear edge.
fn coverage(inside: f64, cell: f64) -> f32 {
    (inside / cell + 0.5).clamp(0.0, 1.0) as f32
}

/// Paints drivable area, route corridor, agents now and 1 s ahead, red stop
/// lines and the ego speed into a `grid x grid` window. Region edges are
/// anti-aliased so masks keep sub-cell position information.
pub fn rasterize(ctx: &FrameContext, grid: usize) -> RasterScene {
    let ego = ctx.frame.ego;
    let map = ctx.map;
    let cell = SCENE_EXTENT / grid as f64;
    let mut data = Array3::<f32>::zeros((CHANNELS, grid, grid));
    let now: Vec<_> = ctx.agents_at(0).map(|(a, s)| a.footprint(&s)).collect();
    let ahead: Vec<_> = ctx
        .agents_at(0)
        .map(|(a, s)| a.footprint(&s.extrapolate(AGENT_LOOKAHEAD)))
        .collect();
    let red: Vec<f64> = map
        .stop_lines
        .iter()
        .filter(|l| l.state_at(ctx.frame.timestamp) == LightState::Red)
        .map(|l| l.s)
        .collect();
    let speed = (ego.speed / SPEED_SCALE).clamp(0.0, 1.0) as f32;
    let boxes = |bs: &[crate::geom::OrientedBox], p: Point2| {
        bs.iter().map(|b| coverage(-b.signed_distance(p), cell)).fold(0.0f32, f32::max)
    };
    for r in 0..grid {
        for c in 0..grid {
            let p = ego.pose.transform_point(RasterScene::cell_center(grid, r, c));
            let edge = map.drivable.boundary_distance(p);
            let inside = if point_in_polygon(p, &map.drivable) { edge } else { -edge };
            data[[0, r, c]] = coverage(inside, cell);
            let proj = map.route.project(p);
            data[[1, r, c]] = coverage(ROUTE_HALF_WIDTH - proj.distance, cell);
            data[[2, r, c]] = boxes(&now, p);
            data[[3, r, c]] = boxes(&ahead, p);
            data[[4, r, c]] = red
                .iter()
                .map(|s| {
                    let band = (proj.s - (s - STOP_BEFORE)).min(s + STOP_AFTER - proj.s);
                    coverage(band.min(STOP_HALF_WIDTH - proj.distance), cell)
                })
                .fold(0.0f32, f32::max);
            data[[5, r, c]] = speed;
        }
    }
    RasterScene { data }
}

/// Eight waypoints (every fifth, ending at the last) as `(x/32, y/32, cos h, sin h)`.
pub fn tokenize_trajectory(traj: &Trajectory) -> [f64; TOKEN_DIM] {
    let mut out = [0.0; TOKEN_DIM];
    let w = traj.waypoints();
    for (k, i) in (4..w.len()).step_by(5).enumerate() {
        let p = w[i];
        out[4 * k..4 * k + 4].copy_from_slice(&[p.x / 32.0, p.y / 32.0, p.heading.cos(), p.heading.sin()]);
    }
    out
}

/// Token matrix `(n, 32)` of a vocabulary prefix.
pub fn tokenize_vocab(trajs: &[Trajectory]) -> Array2<f64> {
    let mut out = Array2::zeros((trajs.len(), TOKEN_DIM));
    for (i, t) in trajs.iter().enumerate() {
        for (j, v) in tokenize_trajectory(t).into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Polygon, Polyline, Pose2};
    use crate::vocab::{rollout_controls, sample_candidates, stationary, ControlSegment};
    use crate::world::{EgoParams, EgoState, Frame, Lane, MapModel};

    fn map(width: f64) -> MapModel {
        let center = Polyline::new(vec![Point2::new(-50.0, 0.0), Point2::new(100.0, 0.0)]).unwrap();
        MapModel {
            lanes: vec![Lane {
                centerline: center.clone(),
                width: 3.5,
            }],
            drivable: Polygon::new(vec![
                Point2::new(-50.0, -width),
                Point2::new(100.0, -width),
                Point2::new(100.0, width),
                Point2::new(-50.0, width),
            ])
            .unwrap(),
            route: center,
            stop_lines: vec![],
        }
    }

    fn frame(speed: f64) -> Frame {
        Frame {
            timestamp: 0.0,
            tick: 0,
            ego: EgoState {
                pose: Pose2::new(0.0, 0.0, 0.0),
                speed,
                accel: 0.0,
            },
        }
    }

    #[test]
    fn empty_scene_has_no_agents_and_clamped_speed() {
        let m = map(10.0);
        let ctx = FrameContext {
            map: &m,
            agents: &[],
            frame: frame(20.0),
        };
        let r = rasterize(&ctx, 64);
        assert!(r.data.index_axis(ndarray::Axis(0), 2).iter().all(|v| *v == 0.0));
        assert!(r.data.index_axis(ndarray::Axis(0), 3).iter().all(|v| *v == 0.0));
        assert!(r.data.index_axis(ndarray::Axis(0), 5).iter().all(|v| *v == 1.0));
        assert!(r.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn drivable_area_matches_polygon_area() {
        // a 20 m wide band crossing the whole 64 m window
        let m = map(10.0);
        let mut ego = frame(5.0);
        ego.ego.pose = Pose2::new(0.0, 0.0, 0.3);
        let ctx = FrameContext {
            map: &m,
            agents: &[],
            frame: ego,
        };
        let r = rasterize(&ctx, 64);
        let cells: f32 = r.data.index_axis(ndarray::Axis(0), 0).sum();
        // the rotated band covers 20 / cos(0.3) m of every 64 m row, clipped by the window
        let expected = 20.0 / 0.3f64.cos() * 64.0;
        assert!((cells as f64 - expected).abs() / expected < 0.1, "{cells} vs {expected}");
    }

    #[test]
    fn tokens_examples() {
        let p = EgoParams::default();
        let rest = tokenize_trajectory(&stationary(&p));
        for k in 0..8 {
            assert_eq!(&rest[4 * k..4 * k + 4], &[0.0, 0.0, 1.0, 0.0]);
        }
        let t = rollout_controls(9.0, &[ControlSegment { accel: 0.5, steer: 0.05 }], &p);
        let (a, b) = (tokenize_trajectory(&t), tokenize_trajectory(&t.mirrored()));
        for k in 0..8 {
            assert_eq!(a[4 * k], b[4 * k]);
            assert_eq!(a[4 * k + 1], -b[4 * k + 1]);
            assert_eq!(a[4 * k + 2], b[4 * k + 2]);
            assert_eq!(a[4 * k + 3], -b[4 * k + 3]);
        }
        let fastest = rollout_controls(15.0, &[ControlSegment { accel: 3.0, steer: 0.0 }], &p);
        assert!(fastest.waypoints()[39].x < 64.0);
        for c in sample_candidates(500, &p, 3) {
            let tok = tokenize_trajectory(&c);
            assert!((0..8).all(|k| tok[4 * k].abs() <= 2.0));
        }
    }
}
