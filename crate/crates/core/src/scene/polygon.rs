//! Convex obstacles and the parametric clipping used for ray casting and
//! line-of-sight tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub(crate) fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Convex polygon, counterclockwise, world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConvexPolygon {
    vertices: Vec<[f64; 2]>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::invalid(format!("obstacle needs at least 3 vertices, got {n}")));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("obstacle vertex is not finite"));
        }
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if cross(sub(b, a), sub(c, b)) <= 0.0 {
                return Err(Error::invalid("obstacle must be strictly convex and counterclockwise"));
            }
        }
        // strictly left turns everywhere can still wind twice around
        let turning: f64 = (0..n)
            .map(|i| {
                let a = sub(vertices[(i + 1) % n], vertices[i]);
                let b = sub(vertices[(i + 2) % n], vertices[(i + 1) % n]);
                cross(a, b).atan2(a[0] * b[0] + a[1] * b[1])
            })
            .sum();
        if (turning - std::f64::consts::TAU).abs() > 1e-6 {
            return Err(Error::invalid("obstacle polygon is not simple"));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Axis-aligned rectangle of size `w x h` centred at `c`, rotated by `angle`.
    pub fn rectangle(c: [f64; 2], w: f64, h: f64, angle: f64) -> Result<Self> {
        let (s, co) = angle.sin_cos();
        let corners = [[-w / 2.0, -h / 2.0], [w / 2.0, -h / 2.0], [w / 2.0, h / 2.0], [-w / 2.0, h / 2.0]];
        Self::new(corners.iter().map(|p| [c[0] + co * p[0] - s * p[1], c[1] + s * p[0] + co * p[1]]).collect())
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n).map(|i| cross(self.vertices[i], self.vertices[(i + 1) % n])).sum::<f64>()
    }

    /// Closed containment (boundary counts as inside).
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            cross(sub(b, a), sub(p, a)) >= 0.0
        })
    }

    /// Euclidean distance from `p` to the closed polygon (0 inside).
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                let ab = sub(b, a);
                let ap = sub(p, a);
                let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
                let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
                d[0].hypot(d[1])
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn bounding_circle(&self) -> ([f64; 2], f64) {
        let n = self.vertices.len() as f64;
        let c = self.vertices.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0] / n, acc[1] + v[1] / n]);
        let r = self.vertices.iter().map(|v| (v[0] - c[0]).hypot(v[1] - c[1])).fold(0.0, f64::max);
        (c, r)
    }

    /// Parameter interval `[t_in, t_out]` where `origin + t * dir` lies in the
    /// closed polygon, restricted to `t in [t_lo, t_hi]`.
    pub fn clip(&self, origin: [f64; 2], dir: [f64; 2], t_lo: f64, t_hi: f64) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (t_lo, t_hi);
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let e = sub(self.vertices[(i + 1) % n], a);
            // inside when cross(e, p - a) >= 0, i.e. f0 + t * f1 >= 0
            let f0 = cross(e, sub(origin, a));
            let f1 = cross(e, dir);
            if f1 == 0.0 {
                if f0 < 0.0 {
                    return None;
                }
            } else {
                let t = -f0 / f1;
                if f1 > 0.0 {
                    lo = lo.max(t);
                } else {
                    hi = hi.min(t);
                }
                if lo > hi {
                    return None;
                }
            }
        }
        Some((lo, hi))
    }
}

/// Obstacle with a cached bounding circle for fast rejection.
#[derive(Debug, Clone)]
pub(crate) struct Occluder<'a> {
    poly: &'a ConvexPolygon,
    center: [f64; 2],
    radius: f64,
}

impl<'a> Occluder<'a> {
    pub fn new(poly: &'a ConvexPolygon) -> Self {
        let (center, radius) = poly.bounding_circle();
        Self { poly, center, radius }
    }

    /// Does the closed segment `a -> b` touch the closed polygon?
    pub fn blocks_segment(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let d = sub(b, a);
        let len2 = d[0] * d[0] + d[1] * d[1];
        // distance from circle center to the segment, conservative by a hair
        let ac = sub(self.center, a);
        let t = if len2 > 0.0 { ((ac[0] * d[0] + ac[1] * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = [a[0] + t * d[0] - self.center[0], a[1] + t * d[1] - self.center[1]];
        if q[0].hypot(q[1]) > self.radius * (1.0 + 1e-9) + 1e-9 {
            return false;
        }
        self.poly.clip(a, d, 0.0, 1.0).is_some()
    }

    /// First parameter `t >= 0` at which the ray enters the polygon.
    pub fn ray_entry(&self, origin: [f64; 2], dir: [f64; 2], t_max: f64) -> Option<f64> {
        let oc = sub(self.center, origin);
        let along = oc[0] * dir[0] + oc[1] * dir[1];
        let dir2 = dir[0] * dir[0] + dir[1] * dir[1];
        let perp2 = (oc[0] * oc[0] + oc[1] * oc[1]) - along * along / dir2;
        let r = self.radius * (1.0 + 1e-9) + 1e-9;
        if perp2 > r * r || along < -r * dir2.sqrt() {
            return None;
        }
        self.poly.clip(origin, dir, 0.0, t_max).map(|(lo, _)| lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> ConvexPolygon {
        ConvexPolygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(ConvexPolygon::new(vec![[0.0, 0.0], [1.0, 0.0]]).is_err());
        // clockwise
        assert!(ConvexPolygon::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).is_err());
        // reflex vertex
        assert!(ConvexPolygon::new(vec![[0.0, 0.0], [2.0, 0.0], [1.0, 0.2], [2.0, 2.0], [0.0, 2.0]]).is_err());
        assert!((square().area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let sq = square();
        let (lo, hi) = sq.clip([-1.0, 0.5], [1.0, 0.0], 0.0, f64::INFINITY).unwrap();
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 2.0).abs() < 1e-15);
        assert!(sq.clip([-1.0, 2.0], [1.0, 0.0], 0.0, 10.0).is_none());
        // grazing the top edge counts
        assert!(sq.clip([-1.0, 1.0], [1.0, 0.0], 0.0, 10.0).is_some());
        // segment stopping short
        assert!(sq.clip([-1.0, 0.5], [1.0, 0.0], 0.0, 0.5).is_none());
    }

    #[test]
    fn occluder_checks() {
        let sq = square();
        let occ = Occluder::new(&sq);
        assert!(occ.blocks_segment([-1.0, 0.5], [3.0, 0.5]));
        assert!(occ.blocks_segment([0.5, 0.5], [0.6, 0.6]));
        assert!(!occ.blocks_segment([-1.0, -1.0], [-0.5, 3.0]));
        assert_eq!(occ.ray_entry([-2.0, 0.5], [1.0, 0.0], 100.0), Some(2.0));
        assert_eq!(occ.ray_entry([-2.0, 0.5], [-1.0, 0.0], 100.0), None);
        assert!((sq.distance([2.0, 0.5]) - 1.0).abs() < 1e-15);
        assert_eq!(sq.distance([0.5, 0.5]), 0.0);
    }
}
