//! Planar convex geometry used by the tabletop simulator.
//!
//! Polygons are stored as counter-clockwise vertex lists. Overlap queries go
//! through the Minkowski difference `A ⊕ (−B)`, which for convex inputs is
//! itself a convex polygon: the interiors overlap iff the origin lies strictly
//! inside it, the penetration depth is the distance from the origin to its
//! boundary, and the distance `B` must travel along a direction to separate is
//! the ray exit distance.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at angle `theta` (radians, counter-clockwise from +x).
    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
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

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn of(points: &[Vec2]) -> Aabb {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Aabb { min, max }
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }
}

/// Signed area (positive for counter-clockwise order).
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>() * 0.5
}

pub fn centroid(poly: &[Vec2]) -> Vec2 {
    let n = poly.len();
    let a = signed_area(poly);
    if a.abs() < 1e-300 {
        let s = poly.iter().fold(Vec2::ZERO, |acc, &p| acc + p);
        return s * (1.0 / n as f64);
    }
    let mut c = Vec2::ZERO;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let w = p.cross(q);
        c += (p + q) * w;
    }
    c * (1.0 / (6.0 * a))
}

/// True when the polygon is strictly convex, counter-clockwise, and has positive area.
pub fn is_convex_ccw(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 || signed_area(poly) <= 0.0 {
        return false;
    }
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        (b - a).cross(c - b) > 0.0
    })
}

/// Andrew's monotone chain. Returns the hull counter-clockwise without collinear points.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(pts.len() * 2);
    let turns_left = |hull: &[Vec2], p: Vec2| {
        let a = hull[hull.len() - 2];
        let b = hull[hull.len() - 1];
        (b - a).cross(p - b) > 0.0
    };
    for &p in &pts {
        while hull.len() >= 2 && !turns_left(&hull, p) {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && !turns_left(&hull, p) {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Point containment for a counter-clockwise convex polygon; boundary points count as inside.
pub fn contains(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        (b - a).cross(p - a) >= 0.0
    })
}

/// Vertices of `A ⊕ (−B)` as a counter-clockwise convex polygon.
pub fn minkowski_difference(a: &[Vec2], b: &[Vec2]) -> Vec<Vec2> {
    let mut pts = Vec::with_capacity(a.len() * b.len());
    for &p in a {
        for &q in b {
            pts.push(p - q);
        }
    }
    convex_hull(&pts)
}

/// Distance from the origin to each edge line of `m` (positive when the origin is inside).
fn edge_clearances(m: &[Vec2]) -> impl Iterator<Item = (Vec2, f64)> + '_ {
    let n = m.len();
    (0..n).map(move |i| {
        let a = m[i];
        let b = m[(i + 1) % n];
        let e = b - a;
        let len = e.norm();
        // outward normal of a ccw edge
        let normal = Vec2::new(e.y / len, -e.x / len);
        (normal, normal.dot(a))
    })
}

/// Minimum translation distance that separates two convex polygons (0 when disjoint or touching).
pub fn penetration_depth(a: &[Vec2], b: &[Vec2]) -> f64 {
    let m = minkowski_difference(a, b);
    if m.len() < 3 {
        return 0.0;
    }
    let depth = edge_clearances(&m).map(|(_, c)| c).fold(f64::INFINITY, f64::min);
    depth.max(0.0)
}

/// Smallest `s ≥ 0` such that `moving + s·dir` no longer overlaps `fixed`.
///
/// `dir` must be a unit vector. Returns 0 when the polygons do not overlap.
pub fn exit_distance(fixed: &[Vec2], moving: &[Vec2], dir: Vec2) -> f64 {
    let m = minkowski_difference(fixed, moving);
    if m.len() < 3 {
        return 0.0;
    }
    let mut inside = true;
    let mut exit = f64::INFINITY;
    for (normal, offset) in edge_clearances(&m) {
        if offset <= 0.0 {
            inside = false;
            break;
        }
        let rate = normal.dot(dir);
        if rate > 0.0 {
            exit = exit.min(offset / rate);
        }
    }
    if inside && exit.is_finite() {
        exit
    } else {
        0.0
    }
}

/// Axis-aligned rectangle centered at `center`, extents along `axis` and its perpendicular.
pub fn oriented_rect(center: Vec2, axis: Vec2, half_along: f64, half_across: f64) -> Vec<Vec2> {
    let u = axis * half_along;
    let v = axis.perp() * half_across;
    vec![center - u - v, center + u - v, center + u + v, center - u + v]
}

/// Regular polygon approximating a disc.
pub fn regular_polygon(center: Vec2, radius: f64, sides: usize) -> Vec<Vec2> {
    (0..sides)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / sides as f64;
            center + Vec2::from_angle(a) * radius
        })
        .collect()
}
