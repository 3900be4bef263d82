use std::f64::consts::TAU;

use fovlab::classical::{
    concave_hull, polar_to_mask, raytrace_continuous, raytrace_quantized, rasterize_polygon, ClassicalMethod,
    FovPolygon,
};
use fovlab::geometry::GridSpec;
use proptest::prelude::*;

fn cloud(n: std::ops::Range<usize>, r: f64) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-r..r, -r..r).prop_map(|(x, y)| [x, y]), n)
}

/// Polygon star-shaped about the origin: one vertex per jittered sector, so
/// consecutive azimuths are less than pi apart.
fn star(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0..0.9f64, 1.0..30.0f64), n).prop_map(|v| {
        let w = TAU / v.len() as f64;
        v.iter().enumerate().map(|(i, &(u, r))| ((i as f64 + u) * w, r)).map(|(t, r)| [r * t.cos(), r * t.sin()]).collect()
    })
}

fn shoelace(v: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for i in 0..v.len() {
        let j = (i + 1) % v.len();
        s += v[i][0] * v[j][1] - v[j][0] * v[i][1];
    }
    s.abs() / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain, strictly convex vertices.
fn convex_hull(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    let mut h: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = h.len();
        for &q in &p {
            while h.len() >= start + 2 && cross(h[h.len() - 2], h[h.len() - 1], q) <= 0.0 {
                h.pop();
            }
            h.push(q);
        }
        h.pop();
        if pass == 0 {
            p.reverse();
        }
    }
    h
}

fn bin_max(points: &[[f64; 2]], n_bins: usize, azimuth: f64) -> f64 {
    let w = TAU / n_bins as f64;
    let b = ((azimuth / w) as usize).min(n_bins - 1);
    points
        .iter()
        .filter(|p| {
            let a = p[1].atan2(p[0]).rem_euclid(TAU);
            let a = if a >= TAU { 0.0 } else { a };
            ((a / w) as usize).min(n_bins - 1) == b
        })
        .map(|p| p[0].hypot(p[1]))
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn every_point_is_within_its_bin(pts in cloud(1..300, 50.0), n_bins in 8usize..720) {
        let pf = raytrace_quantized(&pts, n_bins).unwrap();
        for p in &pts {
            prop_assert!(pf.range_at(*p) >= p[0].hypot(p[1]));
        }
    }

    #[test]
    fn adding_points_never_shrinks_bins(a in cloud(0..200, 50.0), b in cloud(0..200, 50.0)) {
        let base = raytrace_quantized(&a, 360).unwrap();
        let all: Vec<_> = a.iter().chain(&b).copied().collect();
        let grown = raytrace_quantized(&all, 360).unwrap();
        for (x, y) in base.ranges.iter().zip(&grown.ranges) {
            prop_assert!(y >= x);
        }
        let spec = GridSpec::new(32.0, 48).unwrap();
        prop_assert!(polar_to_mask(&grown, &spec).contains(&polar_to_mask(&base, &spec)));
    }

    #[test]
    fn polar_mask_matches_brute_force(pts in cloud(0..200, 40.0), n_bins in 8usize..400, res in 8usize..40) {
        let spec = GridSpec::new(32.0, res).unwrap();
        let mask = polar_to_mask(&raytrace_quantized(&pts, n_bins).unwrap(), &spec);
        for row in 0..res {
            for col in 0..res {
                let c = spec.cell_center(row, col);
                let az = c[1].atan2(c[0]).rem_euclid(TAU);
                let pos = az / TAU * n_bins as f64;
                if (pos - pos.round()).abs() < 1e-9 {
                    continue;
                }
                let lim = bin_max(&pts, n_bins, az);
                let expect = lim > 0.0 && c[0].hypot(c[1]) <= lim;
                prop_assert_eq!(mask.get(row, col), expect, "cell ({}, {})", row, col);
            }
        }
    }

    #[test]
    fn continuous_area_is_the_shoelace_area(v in star(4..200)) {
        let poly = raytrace_continuous(&v).unwrap();
        prop_assert!((poly.area() - shoelace(&v)).abs() <= 1e-9 * shoelace(&v).max(1.0));
    }

    #[test]
    fn rasterized_area_error_is_bounded_by_perimeter(v in star(4..100), res in 8usize..128) {
        let poly = FovPolygon { vertices: v };
        let spec = GridSpec::new(32.0, res).unwrap();
        let raster = rasterize_polygon(&poly, &spec).count_visible() as f64 * spec.cell_area();
        let err = (raster - poly.area()).abs();
        prop_assert!(err <= poly.perimeter() * spec.cell_size(), "err {err}, perimeter {}", poly.perimeter());
    }

    #[test]
    fn large_k_gives_the_convex_hull(pts in cloud(3..60, 20.0)) {
        let hull = convex_hull(&pts);
        prop_assume!(hull.len() >= 3 && shoelace(&hull) > 1e-6);
        let poly = concave_hull(&pts, pts.len()).unwrap();
        prop_assert!((poly.area() - shoelace(&hull)).abs() <= 1e-9 * shoelace(&hull));
        for p in &pts {
            prop_assert!(poly.contains(*p));
        }
    }
}

#[test]
fn concave_hull_contains_every_point() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let n = rng.random_range(3..150);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)]).collect();
        let k = rng.random_range(3..20);
        let poly = concave_hull(&pts, k).unwrap();
        assert!(poly.is_simple(), "trial {trial}");
        assert!(poly.area() <= shoelace(&convex_hull(&pts)) + 1e-9, "trial {trial}");
        for p in &pts {
            assert!(poly.contains(*p), "trial {trial}: {p:?} outside");
        }
    }
}

#[test]
fn spoofed_points_only_grow_the_rayq_mask() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let spec = GridSpec::new(32.0, 64).unwrap();
    let method = ClassicalMethod::Rayq { n_bins: 360 };
    for _ in 0..50 {
        let benign: Vec<[f64; 2]> = (0..500).map(|_| [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)]).collect();
        let mut spoofed = benign.clone();
        spoofed.extend((0..100).map(|_| [rng.random_range(-32.0..32.0), rng.random_range(-32.0..32.0)]));
        let a = method.estimate(&benign, &spec).unwrap();
        let b = method.estimate(&spoofed, &spec).unwrap();
        assert!(b.contains(&a));
    }
}
