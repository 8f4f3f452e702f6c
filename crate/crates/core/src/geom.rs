//! Planar geometry: poses, oriented boxes, polylines and polygons.
//!
//! Everything is `f64` and every function is pure.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::GeomError;

/// Distance under which a point is considered to lie on a polygon edge.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn from_heading(h: f64) -> Self {
        Self::new(h.cos(), h.sin())
    }

    pub fn rotate(self, h: f64) -> Self {
        let (s, c) = h.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// A planar pose. The heading is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawPose")]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    heading: f64,
}

impl From<RawPose> for Pose2 {
    fn from(r: RawPose) -> Self {
        Pose2::new(r.x, r.y, r.heading)
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Pose2::new(0.0, 0.0, 0.0)
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn direction(&self) -> Point2 {
        Point2::from_heading(self.heading)
    }

    /// Maps a pose expressed in this pose's frame into the parent frame.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let p = self.transform_point(local.position());
        Pose2::new(p.x, p.y, self.heading + local.heading)
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, local: Point2) -> Point2 {
        self.position() + local.rotate(self.heading)
    }

    /// Expresses a parent-frame point in this pose's frame.
    pub fn to_local(&self, world: Point2) -> Point2 {
        (world - self.position()).rotate(-self.heading)
    }

    /// Expresses a parent-frame pose in this pose's frame.
    pub fn relative(&self, world: &Pose2) -> Pose2 {
        let p = self.to_local(world.position());
        Pose2::new(p.x, p.y, world.heading - self.heading)
    }
}

/// A rectangle with a pose at its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2, half_length: f64, half_width: f64) -> Result<Self, GeomError> {
        if !(half_length > 0.0 && half_width > 0.0) {
            return Err(GeomError::InvalidBox {
                half_length,
                half_width,
            });
        }
        Ok(Self {
            center,
            half_length,
            half_width,
        })
    }

    /// Corners in counter-clockwise order, starting at rear-right.
    pub fn corners(&self) -> [Point2; 4] {
        let (l, w) = (self.half_length, self.half_width);
        [
            Point2::new(-l, -w),
            Point2::new(l, -w),
            Point2::new(l, w),
            Point2::new(-l, w),
        ]
        .map(|c| self.center.transform_point(c))
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_length * self.half_width
    }

    /// Radius of the circumscribed circle.
    pub fn radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    pub fn contains(&self, p: Point2) -> bool {
        let q = self.center.to_local(p);
        q.x.abs() <= self.half_length && q.y.abs() <= self.half_width
    }

    /// Euclidean distance to the boundary, negative inside.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        let q = self.center.to_local(p);
        let dx = q.x.abs() - self.half_length;
        let dy = q.y.abs() - self.half_width;
        dx.max(0.0).hypot(dy.max(0.0)) + dx.max(dy).min(0.0)
    }
}

fn project_interval(corners: &[Point2; 4], axis: Point2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let d = c.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// True iff the two rectangles overlap or touch (separating-axis test).
pub fn boxes_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = [
        a.center.direction(),
        a.center.direction().rotate(PI / 2.0),
        b.center.direction(),
        b.center.direction().rotate(PI / 2.0),
    ];
    axes.iter().all(|&axis| {
        let (a_lo, a_hi) = project_interval(&ca, axis);
        let (b_lo, b_hi) = project_interval(&cb, axis);
        a_lo <= b_hi && b_lo <= a_hi
    })
}

/// An open polyline of at least two distinct consecutive points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polyline {
    points: Vec<Point2>,
    cumulative: Vec<f64>,
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point.
    pub s: f64,
    /// Signed offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub tangent_heading: f64,
    /// Euclidean distance to the closest point.
    pub distance: f64,
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Result<Self, GeomError> {
        if points.len() < 2 {
            return Err(GeomError::PolylineTooShort(points.len()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            let len = (w[1] - w[0]).norm();
            if !(len > 0.0) {
                return Err(GeomError::DegenerateSegment(i));
            }
            cumulative.push(cumulative[i] + len);
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().expect("polyline has points")
    }

    pub fn cumulative_lengths(&self) -> &[f64] {
        &self.cumulative
    }

    /// Closest point on the polyline. Exact distance ties keep the smallest arc length.
    pub fn project(&self, p: Point2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: 0.0,
            tangent_heading: 0.0,
            distance: f64::INFINITY,
        };
        for (i, w) in self.points.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len = self.cumulative[i + 1] - self.cumulative[i];
            let t = ((p - w[0]).dot(seg) / seg.norm_sq()).clamp(0.0, 1.0);
            let foot = w[0] + seg * t;
            let distance = (p - foot).norm();
            if distance < best.distance {
                let tangent = seg * (1.0 / len);
                best = Projection {
                    s: self.cumulative[i] + t * len,
                    lateral: tangent.cross(p - foot),
                    tangent_heading: tangent.y.atan2(tangent.x),
                    distance,
                };
            }
        }
        best
    }

    /// Point and tangent heading at arc length `s`, clamped to the polyline.
    pub fn point_at(&self, s: f64) -> (Point2, f64) {
        let s = s.clamp(0.0, self.total_length());
        let i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).expect("finite arc length"))
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let seg = self.points[i + 1] - self.points[i];
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / len;
        (self.points[i] + seg * t, seg.y.atan2(seg.x))
    }

    /// Pose at arc length `s`, optionally shifted sideways (positive left).
    pub fn pose_at(&self, s: f64, lateral: f64) -> Pose2 {
        let (p, h) = self.point_at(s);
        let q = p + Point2::from_heading(h).rotate(PI / 2.0) * lateral;
        Pose2::new(q.x, q.y, h)
    }

    /// Copy shifted sideways by `offset` (positive left), sampled at the input vertices.
    pub fn offset(&self, offset: f64) -> Result<Polyline, GeomError> {
        let n = self.points.len();
        let pts = (0..n)
            .map(|i| {
                let a = self.points[i.saturating_sub(1)];
                let b = self.points[(i + 1).min(n - 1)];
                let t = b - a;
                let normal = Point2::new(-t.y, t.x) * (1.0 / t.norm());
                self.points[i] + normal * offset
            })
            .collect();
        Polyline::new(pts)
    }

    /// Sub-polyline between arc lengths `s0 < s1` (clamped).
    pub fn slice(&self, s0: f64, s1: f64) -> Result<Polyline, GeomError> {
        let (a, _) = self.point_at(s0);
        let (b, _) = self.point_at(s1);
        let mut pts = vec![a];
        for (p, &c) in self.points.iter().zip(&self.cumulative) {
            if c > s0 && c < s1 && (*p - *pts.last().unwrap()).norm() > 1e-9 {
                pts.push(*p);
            }
        }
        if (b - *pts.last().unwrap()).norm() > 1e-9 {
            pts.push(b);
        }
        Polyline::new(pts)
    }

    pub fn reversed(&self) -> Polyline {
        let mut pts = self.points.clone();
        pts.reverse();
        Polyline::new(pts).expect("reversal keeps segments non-degenerate")
    }
}

impl TryFrom<Vec<Point2>> for Polyline {
    type Error = GeomError;
    fn try_from(v: Vec<Point2>) -> Result<Self, Self::Error> {
        Polyline::new(v)
    }
}

impl From<Polyline> for Vec<Point2> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

/// A simple polygon stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polygon {
    ring: Vec<Point2>,
    bbox: (Point2, Point2),
}

fn signed_area(ring: &[Point2]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| ring[i].cross(ring[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

fn segments_cross(a0: Point2, a1: Point2, b0: Point2, b1: Point2) -> bool {
    let d1 = (a1 - a0).cross(b0 - a0);
    let d2 = (a1 - a0).cross(b1 - a0);
    let d3 = (b1 - b0).cross(a0 - b0);
    let d4 = (b1 - b0).cross(a1 - b0);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

impl Polygon {
    /// Builds a polygon, reversing clockwise input. Rejects rings with fewer
    /// than three vertices, zero area or crossing edges.
    pub fn new(mut ring: Vec<Point2>) -> Result<Self, GeomError> {
        if ring.len() < 3 {
            return Err(GeomError::PolygonTooSmall(ring.len()));
        }
        let area = signed_area(&ring);
        if !(area.abs() > 0.0) {
            return Err(GeomError::DegeneratePolygon);
        }
        if area < 0.0 {
            ring.reverse();
        }
        let n = ring.len();
        for i in 0..n {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segments_cross(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                    return Err(GeomError::SelfIntersecting { first: i, second: j });
                }
            }
        }
        let lo = ring.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |a, p| {
            Point2::new(a.x.min(p.x), a.y.min(p.y))
        });
        let hi = ring
            .iter()
            .fold(Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, p| {
                Point2::new(a.x.max(p.x), a.y.max(p.y))
            });
        Ok(Self { ring, bbox: (lo, hi) })
    }

    pub fn ring(&self) -> &[Point2] {
        &self.ring
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.ring)
    }

    pub fn bounding_box(&self) -> (Point2, Point2) {
        self.bbox
    }

    /// Distance from `p` to the nearest edge.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        let n = self.ring.len();
        (0..n)
            .map(|i| segment_distance(p, self.ring[i], self.ring[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Polygon from a left and right boundary polyline of a corridor.
    pub fn from_corridor(left: &Polyline, right: &Polyline) -> Result<Self, GeomError> {
        let mut ring: Vec<Point2> = right.points().to_vec();
        ring.extend(left.points().iter().rev());
        Polygon::new(ring)
    }
}

impl TryFrom<Vec<Point2>> for Polygon {
    type Error = GeomError;
    fn try_from(v: Vec<Point2>) -> Result<Self, Self::Error> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Point2> {
    fn from(p: Polygon) -> Self {
        p.ring
    }
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    segment_distance(p, a, b) <= BOUNDARY_EPS
}

/// Even-odd containment; points on the boundary count as inside.
pub fn point_in_polygon(p: Point2, poly: &Polygon) -> bool {
    let (lo, hi) = poly.bbox;
    if p.x < lo.x - BOUNDARY_EPS
        || p.y < lo.y - BOUNDARY_EPS
        || p.x > hi.x + BOUNDARY_EPS
        || p.y > hi.y + BOUNDARY_EPS
    {
        return false;
    }
    let ring = &poly.ring;
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Projection of `p` onto `line`; see [`Polyline::project`].
pub fn project_to_polyline(p: Point2, line: &Polyline) -> Projection {
    line.project(p)
}
