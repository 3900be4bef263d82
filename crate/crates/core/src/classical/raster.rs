//! Cell-center rasterization of estimator outputs.

use crate::geometry::{azimuth_of, FovMask, GridSpec};
use crate::real::Real;

use super::polygon::FovPolygon;
use super::raytrace::{bin_index, PolarFov};

/// Even-odd scanline fill sampled at cell centers; centers on the boundary
/// are visible.
pub fn rasterize_polygon<T: Real>(poly: &FovPolygon<T>, spec: &GridSpec) -> FovMask {
    let v: Vec<[f64; 2]> = poly.vertices.iter().map(|p| [p[0].f64(), p[1].f64()]).collect();
    let n = spec.resolution;
    let mut mask = FovMask::filled(*spec, false);
    if v.len() < 3 {
        return mask;
    }
    let s = spec.cell_size();
    let col_of = |x: f64| (x + spec.extent) / s - 0.5;
    let mut xs: Vec<f64> = Vec::new();
    for row in 0..n {
        let y = spec.cell_center(row, 0)[1];
        xs.clear();
        for i in 0..v.len() {
            let a = v[i];
            let b = v[(i + 1) % v.len()];
            if (a[1] <= y && y < b[1]) || (b[1] <= y && y < a[1]) {
                xs.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = col_of(pair[0]).ceil().max(0.0);
            let hi = col_of(pair[1]).floor().min(n as f64 - 1.0);
            if lo > hi {
                continue;
            }
            for col in lo as usize..=hi as usize {
                let x = spec.cell_center(row, col)[0];
                // guard against the ceil/floor landing a hair outside
                if x >= pair[0] && x <= pair[1] {
                    mask.cells[row * n + col] = true;
                }
            }
        }
        // boundary points the half-open crossing rule can miss: horizontal
        // edges and upper vertices
        for i in 0..v.len() {
            let a = v[i];
            let b = v[(i + 1) % v.len()];
            let on_row = |x: f64| {
                let c = col_of(x);
                if c == c.round() && c >= 0.0 && c < n as f64 {
                    Some(c as usize)
                } else {
                    None
                }
            };
            if a[1] == y && b[1] == y {
                let (x0, x1) = (a[0].min(b[0]), a[0].max(b[0]));
                let lo = col_of(x0).ceil().max(0.0);
                let hi = col_of(x1).floor().min(n as f64 - 1.0);
                if lo <= hi {
                    for col in lo as usize..=hi as usize {
                        mask.cells[row * n + col] = true;
                    }
                }
            } else if a[1] == y {
                if let Some(col) = on_row(a[0]) {
                    mask.cells[row * n + col] = true;
                }
            }
        }
    }
    mask
}

/// Visible where the cell center's range does not exceed the range of its
/// azimuth bin; zero-range bins are never visible.
pub fn polar_to_mask<T: Real>(pf: &PolarFov<T>, spec: &GridSpec) -> FovMask {
    let nb = pf.n_bins();
    FovMask::from_fn(*spec, |c| {
        let r = c[0].hypot(c[1]);
        let bin = pf.ranges[bin_index(azimuth_of(c[0], c[1]), nb)].f64();
        bin > 0.0 && r <= bin
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_extent_square() {
        let spec = GridSpec::new(10.0, 16).unwrap();
        let sq = FovPolygon { vertices: vec![[-10.0, -10.0], [10.0, -10.0], [10.0, 10.0], [-10.0, 10.0]] };
        assert_eq!(rasterize_polygon(&sq, &spec).count_visible(), 256);
    }

    #[test]
    fn outside_polygon() {
        let spec = GridSpec::new(10.0, 16).unwrap();
        let sq = FovPolygon { vertices: vec![[20.0, 20.0], [30.0, 20.0], [30.0, 30.0]] };
        assert_eq!(rasterize_polygon(&sq, &spec).count_visible(), 0);
    }

    #[test]
    fn boundary_centers_count() {
        // cell centers at +-0.5, +-1.5 ...; square edges pass through them
        let spec = GridSpec::new(4.0, 8).unwrap();
        let sq = FovPolygon { vertices: vec![[-1.5, -1.5], [1.5, -1.5], [1.5, 1.5], [-1.5, 1.5]] };
        assert_eq!(rasterize_polygon(&sq, &spec).count_visible(), 16);
    }

    #[test]
    fn disk_from_constant_bins() {
        let spec = GridSpec::new(10.0, 32).unwrap();
        let pf = PolarFov { ranges: vec![6.0f64; 90] };
        let want = FovMask::from_fn(spec, |c| c[0].hypot(c[1]) <= 6.0);
        assert_eq!(polar_to_mask(&pf, &spec), want);
        let zero = PolarFov { ranges: vec![0.0f64; 90] };
        assert_eq!(polar_to_mask(&zero, &spec).count_visible(), 0);
    }
}
