//! Turning an unordered point cloud into a fixed-size bird's-eye-view grid:
//! projection into the gravity-aligned frame, range/height filtering, and
//! quantization.

mod cloud;
mod grid;
mod pose;

use serde::{Deserialize, Serialize};

pub use cloud::{PointCloud, PoseSidecar, CLOUD_MAGIC, CLOUD_VERSION};
pub use grid::{quantize, BevImage, FovMask, GridSpec};
pub use pose::{Pose, Quaternion};

use crate::error::{Error, Result};
use crate::real::Real;

/// A point after projection: planar position plus the retained height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevPoint<T> {
    pub xy: [T; 2],
    pub z: T,
}

impl<T: Real> BevPoint<T> {
    pub fn range(&self) -> T {
        self.xy[0].hypot(self.xy[1])
    }
}

/// Rotates every return by the sensor attitude into the gravity-aligned,
/// sensor-centred frame. Translation is not applied.
pub fn project_to_bev<T: Real>(cloud: &PointCloud<T>) -> Result<Vec<BevPoint<T>>> {
    project_with(cloud, false)
}

/// Like [`project_to_bev`] but optionally adds the sensor position, giving
/// world-frame coordinates.
pub fn project_with<T: Real>(cloud: &PointCloud<T>, to_world: bool) -> Result<Vec<BevPoint<T>>> {
    cloud.pose.attitude.validate()?;
    let q = cloud.pose.attitude;
    let t = if to_world { cloud.pose.position } else { [T::zero(); 3] };
    Ok(cloud
        .points
        .iter()
        .map(|&p| {
            let r = q.rotate(p);
            BevPoint { xy: [r[0] + t[0], r[1] + t[1]], z: r[2] + t[2] }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    /// Maximum planar range, meters.
    pub max_range: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl FilterSpec {
    pub fn new(max_range: f64, z_min: f64, z_max: f64) -> Result<Self> {
        let spec = Self { max_range, z_min, z_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) {
            return Err(Error::config("filter max_range must be positive"));
        }
        if !(self.z_min < self.z_max) {
            return Err(Error::config("filter requires z_min < z_max"));
        }
        Ok(())
    }

    pub fn accepts<T: Real>(&self, p: &BevPoint<T>) -> bool {
        let z = p.z.f64();
        p.range().f64() <= self.max_range && z >= self.z_min && z <= self.z_max
    }
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { max_range: 75.0, z_min: -3.0, z_max: 3.0 }
    }
}

/// Keeps exactly the points with planar range `<= max_range` and
/// `z` in `[z_min, z_max]`.
pub fn filter_points<T: Real>(points: &[BevPoint<T>], spec: &FilterSpec) -> Vec<BevPoint<T>> {
    points.iter().filter(|p| spec.accepts(p)).copied().collect()
}

/// Polar form of a planar point; azimuth in `[0, 2pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polar<T> {
    pub azimuth: T,
    pub range: T,
}

/// `atan2` normalised into `[0, 2pi)`.
pub fn azimuth_of<T: Real>(x: T, y: T) -> T {
    let a = y.atan2(x);
    let a = if a < T::zero() { a + T::TAU() } else { a };
    // -tiny + 2pi rounds to 2pi
    if a >= T::TAU() {
        T::zero()
    } else {
        a
    }
}

/// Converts planar points to polar form. Points exactly at the origin have no
/// azimuth and are dropped.
pub fn to_polar<T: Real>(points: &[[T; 2]]) -> Vec<Polar<T>> {
    points
        .iter()
        .filter(|p| !(p[0].is_zero() && p[1].is_zero()))
        .map(|p| Polar { azimuth: azimuth_of(p[0], p[1]), range: p[0].hypot(p[1]) })
        .collect()
}

pub fn from_polar<T: Real>(p: &Polar<T>) -> [T; 2] {
    [p.range * p.azimuth.cos(), p.range * p.azimuth.sin()]
}

/// Full preprocessing path: project, filter, quantize.
pub fn preprocess<T: Real>(cloud: &PointCloud<T>, filter: &FilterSpec, grid: &GridSpec) -> Result<BevImage> {
    let kept = planar_points(cloud, filter)?;
    Ok(quantize(&kept, grid))
}

/// Projected and filtered planar points.
pub fn planar_points<T: Real>(cloud: &PointCloud<T>, filter: &FilterSpec) -> Result<Vec<[T; 2]>> {
    Ok(project_to_bev(cloud)?
        .into_iter()
        .filter(|p| filter.accepts(p))
        .map(|p| p.xy)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn cloud(points: Vec<[f64; 3]>, q: Quaternion<f64>) -> PointCloud<f64> {
        PointCloud::new(points, Pose::new([5.0, 5.0, 1.0], q).unwrap(), 0).unwrap()
    }

    #[test]
    fn identity_projection() {
        let out = project_to_bev(&cloud(vec![[1.0, 2.0, 3.0]], Quaternion::identity())).unwrap();
        assert_eq!(out, vec![BevPoint { xy: [1.0, 2.0], z: 3.0 }]);
    }

    #[test]
    fn yaw_projection() {
        let q = Quaternion::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2);
        let out = project_to_bev(&cloud(vec![[1.0, 0.0, 0.0]], q)).unwrap();
        assert!(out[0].xy[0].abs() < 1e-12);
        assert!((out[0].xy[1] - 1.0).abs() < 1e-12);
        assert!(out[0].z.abs() < 1e-12);
    }

    #[test]
    fn world_projection_adds_translation() {
        let out = project_with(&cloud(vec![[1.0, 2.0, 3.0]], Quaternion::identity()), true).unwrap();
        assert_eq!(out[0], BevPoint { xy: [6.0, 7.0], z: 4.0 });
    }

    #[test]
    fn non_unit_quaternion_is_an_error() {
        let mut c = cloud(vec![[1.0, 0.0, 0.0]], Quaternion::identity());
        c.pose.attitude.w = 2.0;
        assert!(project_to_bev(&c).is_err());
    }

    #[test]
    fn filter_examples() {
        let spec = FilterSpec::new(75.0, -2.0, 2.0).unwrap();
        let pts = [
            BevPoint { xy: [80.0, 0.0], z: 0.0 },
            BevPoint { xy: [10.0, 0.0], z: 6.0 },
            BevPoint { xy: [10.0, 0.0], z: 0.0 },
            BevPoint { xy: [75.0, 0.0], z: 2.0 },
        ];
        let kept = filter_points(&pts, &spec);
        assert_eq!(kept, vec![pts[2], pts[3]]);
        assert!(filter_points::<f64>(&[], &spec).is_empty());
        assert!(FilterSpec::new(10.0, 1.0, 1.0).is_err());
        assert!(FilterSpec::new(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn polar_examples() {
        let p = to_polar(&[[1.0, 0.0], [0.0, 2.0], [-3.0, 0.0], [0.0, 0.0], [0.0, -1.0]]);
        assert_eq!(p.len(), 4);
        assert_eq!((p[0].azimuth, p[0].range), (0.0, 1.0));
        assert!((p[1].azimuth - FRAC_PI_2).abs() < 1e-15 && p[1].range == 2.0);
        assert!((p[2].azimuth - PI).abs() < 1e-15 && p[2].range == 3.0);
        assert!((p[3].azimuth - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn azimuth_never_reaches_tau() {
        let a = azimuth_of(1.0f64, -1e-300);
        assert!((0.0..std::f64::consts::TAU).contains(&a));
    }
}
