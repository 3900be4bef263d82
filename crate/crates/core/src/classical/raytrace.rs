use crate::error::{Error, Result};
use crate::geometry::{azimuth_of, to_polar};
use crate::real::Real;

use super::polygon::FovPolygon;

/// Per-azimuth-bin maximum observed range. Bin `i` covers
/// `[2 pi i / n, 2 pi (i + 1) / n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFov<T> {
    pub ranges: Vec<T>,
}

impl<T: Real> PolarFov<T> {
    pub fn n_bins(&self) -> usize {
        self.ranges.len()
    }

    pub fn bin_of(&self, azimuth: T) -> usize {
        bin_index(azimuth, self.ranges.len())
    }

    /// Range limit in the direction of `p`.
    pub fn range_at(&self, p: [T; 2]) -> T {
        self.ranges[self.bin_of(azimuth_of(p[0], p[1]))]
    }
}

pub(crate) fn bin_index<T: Real>(azimuth: T, n_bins: usize) -> usize {
    let b = (azimuth / T::TAU() * T::of(n_bins as f64)).floor();
    b.to_usize().unwrap_or(0).min(n_bins - 1)
}

pub const MIN_BINS: usize = 8;

/// Quantized ray tracing: each bin keeps the largest range among its points.
/// Bins without points have range 0.
pub fn raytrace_quantized<T: Real>(points: &[[T; 2]], n_bins: usize) -> Result<PolarFov<T>> {
    if n_bins < MIN_BINS {
        return Err(Error::config(format!("ray tracing needs at least {MIN_BINS} bins, got {n_bins}")));
    }
    let mut ranges = vec![T::zero(); n_bins];
    for p in to_polar(points) {
        let b = bin_index(p.azimuth, n_bins);
        ranges[b] = ranges[b].max(p.range);
    }
    Ok(PolarFov { ranges })
}

/// Azimuths closer than this are treated as the same direction.
pub const AZIMUTH_TOLERANCE: f64 = 1e-9;

/// Continuous ray tracing: azimuth-sorted points, one per direction (the
/// farthest), joined into a closed polygon.
pub fn raytrace_continuous<T: Real>(points: &[[T; 2]]) -> Result<FovPolygon<T>> {
    let mut polar: Vec<(f64, f64, [T; 2])> = points
        .iter()
        .filter(|p| !(p[0].is_zero() && p[1].is_zero()))
        .map(|&p| (azimuth_of(p[0], p[1]).f64(), p[0].hypot(p[1]).f64(), p))
        .collect();
    polar.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut kept: Vec<(f64, f64, [T; 2])> = Vec::with_capacity(polar.len());
    for item in polar {
        match kept.last_mut() {
            Some(last) if item.0 - last.0 <= AZIMUTH_TOLERANCE => {
                if item.1 >= last.1 {
                    // keep the group's anchor azimuth so chains don't drift
                    *last = (last.0, item.1, item.2);
                }
            }
            _ => kept.push(item),
        }
    }
    // wrap-around: a group straddling 0 / 2pi
    if kept.len() > 1 {
        let first = kept[0];
        let last = kept[kept.len() - 1];
        if first.0 + std::f64::consts::TAU - last.0 <= AZIMUTH_TOLERANCE {
            if last.1 > first.1 {
                kept[0] = last;
            }
            kept.pop();
        }
    }
    if kept.len() < 3 {
        return Err(Error::Degenerate(format!(
            "continuous ray tracing needs 3 distinct azimuths, got {}",
            kept.len()
        )));
    }
    Ok(FovPolygon { vertices: kept.into_iter().map(|k| k.2).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_fills_one_bin() {
        let pf = raytrace_quantized(&[[5.0f64, 0.0]], 360).unwrap();
        assert_eq!(pf.ranges[0], 5.0);
        assert!(pf.ranges[1..].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn max_rule() {
        let pf = raytrace_quantized(&[[3.0f64, 0.0], [7.0, 0.0]], 360).unwrap();
        assert_eq!(pf.ranges[0], 7.0);
    }

    #[test]
    fn too_few_bins() {
        assert!(raytrace_quantized::<f64>(&[], 4).is_err());
    }

    #[test]
    fn diamond_polygon() {
        let poly = raytrace_continuous(&[[1.0f64, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert!((poly.area() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_azimuth_keeps_farthest() {
        let poly = raytrace_continuous(&[[1.0f64, 0.0], [3.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert_eq!(poly.vertices.len(), 4);
        assert!(poly.vertices.contains(&[3.0, 0.0]));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(raytrace_continuous(&[[1.0f64, 0.0], [0.0, 1.0]]), Err(Error::Degenerate(_))));
        assert!(raytrace_continuous(&[[1.0f64, 0.0], [2.0, 0.0], [3.0, 0.0]]).is_err());
    }
}
