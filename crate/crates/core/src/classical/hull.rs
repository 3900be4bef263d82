//! k-nearest-neighbour concave hull.
//!
//! Gift wrapping over the `k` nearest unused points: from the lowest point,
//! each step takes the candidate with the largest clockwise turn from the
//! previous edge whose new edge does not cross the boundary built so far.
//! When no candidate works, or the closed polygon leaves points outside, the
//! search restarts with `k + 1`.

use crate::error::{Error, Result};
use crate::real::Real;

use super::polygon::{contains_f64, orient, segments_touch, FovPolygon};

pub const MIN_K: usize = 3;

/// Default neighbourhood size.
pub const DEFAULT_K: usize = 16;

pub fn concave_hull<T: Real>(points: &[[T; 2]], k: usize) -> Result<FovPolygon<T>> {
    if k < MIN_K {
        return Err(Error::config(format!("concave hull k must be at least {MIN_K}, got {k}")));
    }
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0].f64(), p[1].f64()]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!("concave hull needs 3 distinct points, got {}", pts.len())));
    }
    if all_collinear(&pts) {
        return Err(Error::Degenerate("all points are collinear".into()));
    }
    let n = pts.len();
    let mut k = k.min(n - 1);
    loop {
        if let Some(hull) = wrap(&pts, k) {
            let vertices = hull.iter().map(|&i| [T::of(pts[i][0]), T::of(pts[i][1])]).collect();
            return Ok(FovPolygon { vertices });
        }
        if k >= n - 1 {
            return Err(Error::Degenerate(format!("concave hull failed to close with k = {k}")));
        }
        k += 1;
    }
}

fn all_collinear(pts: &[[f64; 2]]) -> bool {
    let a = pts[0];
    // farthest point from `a` gives a well-conditioned reference line
    let b = pts
        .iter()
        .copied()
        .max_by(|p, q| dist2(a, *p).total_cmp(&dist2(a, *q)))
        .expect("non-empty");
    let scale = dist2(a, b);
    pts.iter().all(|&p| orient(a, b, p).abs() <= 1e-12 * scale)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Turns closer than this to the previous edge's direction count as doubling back.
const TURN_EPS: f64 = 1e-9;

/// Relative tolerance for a point lying on a hull edge.
const COLLINEAR_EPS: f64 = 1e-9;

/// Clockwise angle in `[0, 2pi)` that rotates `from` onto `to`. Angles within
/// [`TURN_EPS`] of a full turn wrap to 0.
fn clockwise_turn(from: [f64; 2], to: [f64; 2]) -> f64 {
    let a = (from[1].atan2(from[0]) - to[1].atan2(to[0])).rem_euclid(std::f64::consts::TAU);
    if a > std::f64::consts::TAU - TURN_EPS {
        0.0
    } else {
        a
    }
}

/// One wrapping attempt with fixed `k`; returns hull vertex indices.
fn wrap(pts: &[[f64; 2]], k: usize) -> Option<Vec<usize>> {
    let n = pts.len();
    let first = (0..n)
        .min_by(|&i, &j| pts[i][1].total_cmp(&pts[j][1]).then(pts[i][0].total_cmp(&pts[j][0])))
        .expect("non-empty");
    let mut used = vec![false; n];
    used[first] = true;
    let mut hull = vec![first];
    let mut current = first;
    // pretend we arrived heading east
    let mut back = [-1.0, 0.0];
    let mut candidates: Vec<usize> = Vec::with_capacity(n);

    loop {
        // the start point becomes eligible once a triangle exists
        let can_close = hull.len() >= 3;
        candidates.clear();
        candidates.extend((0..n).filter(|&i| !used[i] || (can_close && i == first)));
        if candidates.is_empty() {
            break;
        }
        let c = pts[current];
        candidates.sort_by(|&i, &j| dist2(c, pts[i]).total_cmp(&dist2(c, pts[j])).then(i.cmp(&j)));
        candidates.truncate(k);
        let turn = |i: usize| clockwise_turn(back, [pts[i][0] - c[0], pts[i][1] - c[1]]);
        candidates.sort_by(|&i, &j| {
            turn(j)
                .total_cmp(&turn(i))
                .then(dist2(c, pts[j]).total_cmp(&dist2(c, pts[i])))
        });

        let next = candidates.iter().copied().find(|&cand| {
            // doubling back along the last edge would create a spike
            if hull.len() > 1 && turn(cand) < TURN_EPS {
                return false;
            }
            let closing = cand == first;
            let m = hull.len();
            // edges hull[e] -> hull[e+1]; the last one ends at `current`
            (0..m.saturating_sub(1)).all(|e| {
                if e + 2 == m || (closing && e == 0) {
                    return true;
                }
                !segments_touch(c, pts[cand], pts[hull[e]], pts[hull[e + 1]])
            })
        });
        let Some(next) = next else {
            return None;
        };

        if next == first {
            break;
        }
        used[next] = true;
        // points the new edge passes over are on the boundary already
        let d = [pts[next][0] - c[0], pts[next][1] - c[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        for (i, q) in pts.iter().enumerate() {
            if used[i] {
                continue;
            }
            let t = (q[0] - c[0]) * d[0] + (q[1] - c[1]) * d[1];
            if t > 0.0 && t < len2 && orient(c, pts[next], *q).abs() <= COLLINEAR_EPS * len2 {
                used[i] = true;
            }
        }
        hull.push(next);
        back = [c[0] - pts[next][0], c[1] - pts[next][1]];
        current = next;
    }

    if hull.len() < 3 {
        return None;
    }
    // closing edge must not cross the boundary either
    let last = pts[*hull.last().expect("non-empty")];
    let m = hull.len();
    for e in 1..m.saturating_sub(2) {
        if segments_touch(last, pts[first], pts[hull[e]], pts[hull[e + 1]]) {
            return None;
        }
    }
    let poly: Vec<[f64; 2]> = hull.iter().map(|&i| pts[i]).collect();
    pts.iter().all(|&p| contains_f64(&poly, p)).then_some(hull)
}
