//! Planar geometry in meters: vectors, rectangles, polygons, polylines and the crossing map.

use std::ops::{Add, Mul, Sub};

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
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn length(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Self) -> f64 {
        (self - o).length()
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }
}

impl Add for Vec2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { min: Vec2::new(x0.min(x1), y0.min(y1)), max: Vec2::new(x0.max(x1), y0.max(y1)) }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self { min: self.min - Vec2::new(margin, margin), max: self.max + Vec2::new(margin, margin) }
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [self.min, Vec2::new(self.max.x, self.min.y), self.max, Vec2::new(self.min.x, self.max.y)]
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon { points: self.corners().to_vec() }
    }

    /// Nearest ray parameter `t > 0` at which `origin + t·dir` enters or crosses the boundary.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        // Slab test; a ray starting inside reports its exit distance.
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for (o, d, lo, hi) in [(origin.x, dir.x, self.min.x, self.max.x), (origin.y, dir.y, self.min.y, self.max.y)] {
            if d.abs() < 1e-12 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let (a, b) = ((lo - o) / d, (hi - o) / d);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t1 < t0 || t1 <= 0.0 {
            return None;
        }
        Some(if t0 > 0.0 { t0 } else { t1 })
    }
}

/// Simple (non-self-intersecting) polygon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub points: Vec<Vec2>,
}

impl Polygon {
    /// Even-odd crossing test.
    pub fn contains(&self, p: Vec2) -> bool {
        let pts = &self.points;
        let mut inside = false;
        let mut j = pts.len().wrapping_sub(1);
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn bounds(&self) -> Rect {
        let mut r = Rect { min: Vec2::new(f64::INFINITY, f64::INFINITY), max: Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY) };
        for p in &self.points {
            r.min = Vec2::new(r.min.x.min(p.x), r.min.y.min(p.y));
            r.max = Vec2::new(r.max.x.max(p.x), r.max.y.max(p.y));
        }
        r
    }

    pub fn intersects_rect(&self, r: &Rect) -> bool {
        if !self.bounds().intersects(r) {
            return false;
        }
        if self.points.iter().any(|&p| r.contains(p)) || r.corners().iter().any(|&c| self.contains(c)) {
            return true;
        }
        let edges = |pts: &[Vec2]| (0..pts.len()).map(|i| (pts[i], pts[(i + 1) % pts.len()])).collect::<Vec<_>>();
        let rc = r.corners();
        edges(&self.points).iter().any(|&(a, b)| edges(&rc).iter().any(|&(c, d)| segments_cross(a, b, c, d)))
    }
}

fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// Open polyline parameterised by arc length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Vec2>,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Point and unit heading at arc length `s` (clamped to the ends).
    pub fn sample(&self, s: f64) -> (Vec2, Vec2) {
        let mut rest = s.max(0.0);
        let last = self.points.len().saturating_sub(2);
        for (i, w) in self.points.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len = seg.length();
            if rest <= len || i == last {
                let dir = seg * (1.0 / len);
                return (w[0] + dir * rest.min(len), dir);
            }
            rest -= len;
        }
        (self.points[0], Vec2::new(1.0, 0.0))
    }

    /// Arc length of the orthogonal projection of `p` onto the polyline.
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut acc = 0.0;
        for w in self.points.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.length();
            let t = ((p - w[0]).dot(seg) / (len * len)).clamp(0.0, 1.0);
            let q = w[0] + seg * t;
            let d = q.distance(p);
            if d < best.0 {
                best = (d, acc + t * len);
            }
            acc += len;
        }
        best.1
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        let (q, _) = self.sample(self.project(p));
        q.distance(p)
    }
}

/// Rectangle with arbitrary heading: the footprint of a vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.heading) * (self.length / 2.0);
        let s = Vec2::from_angle(self.heading).perp() * (self.width / 2.0);
        let c = self.center;
        [c + f + s, c + f - s, c - f - s, c - f + s]
    }

    /// Separating-axis test against an axis-aligned rectangle.
    pub fn intersects_rect(&self, r: &Rect) -> bool {
        let bc = self.corners();
        let rc = r.corners();
        let axes = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::from_angle(self.heading), Vec2::from_angle(self.heading).perp()];
        axes.iter().all(|&axis| {
            let span = |pts: &[Vec2; 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    let v = p.dot(axis);
                    (lo.min(v), hi.max(v))
                })
            };
            let (a0, a1) = span(&bc);
            let (b0, b1) = span(&rc);
            a0 <= b1 && b0 <= a1
        })
    }
}
