use crate::real::Real;

/// Simple polygon bounding an estimated field of view, sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FovPolygon<T> {
    pub vertices: Vec<[T; 2]>,
}

impl<T: Real> FovPolygon<T> {
    /// Signed shoelace area (positive when counterclockwise).
    pub fn signed_area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        let v = &self.vertices;
        (0..v.len())
            .map(|i| {
                let a = v[i];
                let b = v[(i + 1) % v.len()];
                (b[0] - a[0]).f64().hypot((b[1] - a[1]).f64())
            })
            .sum()
    }

    /// Even-odd containment with boundary points counted inside.
    pub fn contains(&self, p: [T; 2]) -> bool {
        let p = [p[0].f64(), p[1].f64()];
        let v: Vec<[f64; 2]> = self.vertices.iter().map(|q| [q[0].f64(), q[1].f64()]).collect();
        contains_f64(&v, p)
    }

    pub fn is_simple(&self) -> bool {
        let v: Vec<[f64; 2]> = self.vertices.iter().map(|q| [q[0].f64(), q[1].f64()]).collect();
        let n = v.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_touch(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                    return false;
                }
            }
        }
        true
    }
}

pub(crate) fn shoelace<T: Real>(v: &[[T; 2]]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            a[0].f64() * b[1].f64() - b[0].f64() * a[1].f64()
        })
        .sum::<f64>()
}

pub(crate) fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let scale = (b[0] - a[0]).abs() + (b[1] - a[1]).abs() + 1.0;
    orient(a, b, p).abs() <= 1e-12 * scale * scale
        && p[0] >= a[0].min(b[0]) - 1e-12 * scale
        && p[0] <= a[0].max(b[0]) + 1e-12 * scale
        && p[1] >= a[1].min(b[1]) - 1e-12 * scale
        && p[1] <= a[1].max(b[1]) + 1e-12 * scale
}

/// Closed segments `ab` and `cd` share at least one point.
pub(crate) fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

pub(crate) fn on_boundary(v: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = v.len();
    (0..n).any(|i| on_segment(v[i], v[(i + 1) % n], p))
}

pub(crate) fn contains_f64(v: &[[f64; 2]], p: [f64; 2]) -> bool {
    if on_boundary(v, p) {
        return true;
    }
    let n = v.len();
    let mut inside = false;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}
