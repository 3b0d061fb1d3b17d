//! Planar geometry: rigid transforms, oriented boxes with a separating-axis
//! overlap test, polygons and arc-length parameterized polylines.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

/// Position and heading in some frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// The rigid motion taking local coordinates into the frame that contains
/// `origin`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub origin: Vec2,
    pub heading: f64,
    cos: f64,
    sin: f64,
}

impl Frame {
    pub fn new(origin: Vec2, heading: f64) -> Self {
        let (sin, cos) = heading.sin_cos();
        Self {
            origin,
            heading,
            cos,
            sin,
        }
    }

    pub fn to_parent(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            self.origin.x + self.cos * p.x - self.sin * p.y,
            self.origin.y + self.sin * p.x + self.cos * p.y,
        )
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(self.cos * d.x + self.sin * d.y, -self.sin * d.x + self.cos * d.y)
    }

    pub fn vec_to_local(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.cos * v.x + self.sin * v.y, -self.sin * v.x + self.cos * v.y)
    }

    pub fn vec_to_parent(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.cos * v.x - self.sin * v.y, self.sin * v.x + self.cos * v.y)
    }

    pub fn pose_to_parent(&self, p: &Pose) -> Pose {
        let q = self.to_parent(p.position());
        Pose::new(q.x, q.y, p.heading + self.heading)
    }

    pub fn pose_to_local(&self, p: &Pose) -> Pose {
        let q = self.to_local(p.position());
        Pose::new(q.x, q.y, p.heading - self.heading)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            length,
            width,
        }
    }

    pub fn at(pose: &Pose, length: f64, width: f64) -> Self {
        Self::new(pose.position(), pose.heading, length, width)
    }

    /// Corners counter-clockwise from front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.heading).scale(0.5 * self.length);
        let l = Vec2::from_angle(self.heading).perp().scale(0.5 * self.width);
        let c = self.center;
        [c + f + l, c - f + l, c - f - l, c + f - l]
    }

    fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let p = c.dot(axis);
        (lo.min(p), hi.max(p))
    })
}

/// Projection gap below which touching boxes still count as overlapping.
pub const CONTACT_TOLERANCE: f64 = 1e-9;

/// Separating-axis test over the four edge normals. Boxes are closed sets, so
/// touching boundaries (up to [`CONTACT_TOLERANCE`]) count as overlap.
pub fn obb_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    a.axes().into_iter().chain(b.axes()).all(|axis| {
        let (alo, ahi) = project(&ca, axis);
        let (blo, bhi) = project(&cb, axis);
        ahi + CONTACT_TOLERANCE >= blo && bhi + CONTACT_TOLERANCE >= alo
    })
}

/// Crossing-number point-in-polygon; the polygon is implicitly closed.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Whether segments `p1p2` and `q1q2` intersect at a point interior to both.
fn segments_cross(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = (p2 - p1).cross(q1 - p1);
    let d2 = (p2 - p1).cross(q2 - p1);
    let d3 = (q2 - q1).cross(p1 - q1);
    let d4 = (q2 - q1).cross(p2 - q1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// True when two non-adjacent edges of the closed polygon cross.
pub fn polygon_self_intersects(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 4 {
        return false;
    }
    let edge = |i: usize| (poly[i], poly[(i + 1) % n]);
    for i in 0..n {
        let (a1, a2) = edge(i);
        let (lo, hi) = (a1.x.min(a2.x), a1.x.max(a2.x));
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (b1, b2) = edge(j);
            if b1.x.max(b2.x) < lo || b1.x.min(b2.x) > hi {
                continue;
            }
            if segments_cross(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

/// A polyline with cumulative arc length.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    arc: Vec<f64>,
}

/// Closest point on a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel.
    pub lateral: f64,
    pub distance: f64,
}

impl Polyline {
    /// `None` for fewer than two points.
    pub fn new(points: Vec<Vec2>) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for w in points.windows(2) {
            let last = *arc.last().unwrap_or(&0.0);
            arc.push(last + (w[1] - w[0]).norm());
        }
        Some(Self { points, arc })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap_or(&0.0)
    }

    fn segment_at(&self, s: f64) -> usize {
        let i = self.arc.partition_point(|&a| a <= s);
        i.clamp(1, self.points.len() - 1) - 1
    }

    /// Point and tangent heading at arc length `s`, extrapolated linearly
    /// beyond either end.
    pub fn sample(&self, s: f64) -> Pose {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = b - a;
        let len = seg.norm().max(1e-12);
        let t = (s - self.arc[i]) / len;
        let p = a + seg.scale(t);
        Pose::new(p.x, p.y, seg.y.atan2(seg.x))
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
        };
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let seg = b - a;
            let len2 = seg.dot(seg);
            let t = if len2 > 0.0 { ((p - a).dot(seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let foot = a + seg.scale(t);
            let d = (p - foot).norm();
            if d < best.distance {
                let side = seg.cross(p - a);
                best = Projection {
                    s: self.arc[i] + t * len2.sqrt(),
                    lateral: d.copysign(side),
                    distance: d,
                };
            }
        }
        best
    }

    /// `count` evenly spaced points from arc length `start` to `end`.
    pub fn resample(&self, start: f64, end: f64, count: usize) -> Vec<Vec2> {
        if count == 0 {
            return Vec::new();
        }
        if count == 1 {
            return vec![self.sample(start).position()];
        }
        (0..count)
            .map(|i| self.sample(start + (end - start) * i as f64 / (count - 1) as f64).position())
            .collect()
    }
}
