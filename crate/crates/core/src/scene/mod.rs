//! Synthetic planar scenes: convex obstacles around a sensor, a beam-based
//! LiDAR simulator, and exact line-of-sight ground truth.

pub mod dataset;
mod polygon;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use polygon::ConvexPolygon;
use polygon::Occluder;

use crate::error::{Error, Result};
use crate::geometry::{FovMask, GridSpec, PointCloud, Pose, PoseSidecar, Quaternion};
use crate::seed;

/// Obstacles around a sensor. With `enclosed` set, the square
/// `[-bounds, bounds]^2` is an opaque wall.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub obstacles: Vec<ConvexPolygon>,
    pub sensor: Pose<f64>,
    pub bounds: f64,
    pub enclosed: bool,
}

impl Scene {
    pub fn new(obstacles: Vec<ConvexPolygon>, sensor: Pose<f64>, bounds: f64, enclosed: bool) -> Result<Self> {
        let scene = Self { obstacles, sensor, bounds, enclosed };
        scene.validate()?;
        Ok(scene)
    }

    /// Empty open scene with the sensor at the origin.
    pub fn open(bounds: f64) -> Self {
        Self { obstacles: Vec::new(), sensor: Pose::identity(), bounds, enclosed: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        if !(self.bounds > 0.0) {
            return Err(Error::invalid("scene bounds must be positive"));
        }
        let s = self.sensor_xy();
        if self.enclosed && (s[0].abs() >= self.bounds || s[1].abs() >= self.bounds) {
            return Err(Error::invalid("sensor lies outside the enclosure"));
        }
        if let Some(i) = self.obstacles.iter().position(|o| o.contains(s)) {
            return Err(Error::invalid(format!("sensor lies inside obstacle {i}")));
        }
        Ok(())
    }

    pub fn sensor_xy(&self) -> [f64; 2] {
        [self.sensor.position[0], self.sensor.position[1]]
    }

    fn occluders(&self) -> Vec<Occluder<'_>> {
        self.obstacles.iter().map(Occluder::new).collect()
    }

    /// Distance along the unit world-frame direction `dir` to the first
    /// surface, or `None` if nothing is hit within `t_max`.
    pub fn cast_ray(&self, dir: [f64; 2], t_max: f64) -> Option<f64> {
        cast(&self.occluders(), self, dir, t_max)
    }

    /// Exact line of sight from the sensor to a world-frame point.
    pub fn line_of_sight(&self, target: [f64; 2]) -> bool {
        visible(&self.occluders(), self, target)
    }

    pub fn to_json(&self) -> SceneFile {
        SceneFile {
            bounds: self.bounds,
            enclosed: self.enclosed,
            sensor: PoseSidecar::from_pose(&self.sensor, None),
            obstacles: self.obstacles.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.to_json())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: SceneFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        file.into_scene()
    }
}

/// JSON form: `{bounds, enclosed, sensor:{position,quaternion}, obstacles:[[[x,y],...],...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub bounds: f64,
    #[serde(default)]
    pub enclosed: bool,
    pub sensor: PoseSidecar,
    pub obstacles: Vec<ConvexPolygon>,
}

impl SceneFile {
    pub fn into_scene(self) -> Result<Scene> {
        let obstacles = self
            .obstacles
            .into_iter()
            .map(|o| ConvexPolygon::new(o.vertices().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Scene::new(obstacles, self.sensor.to_pose(), self.bounds, self.enclosed)
    }
}

fn cast(occluders: &[Occluder<'_>], scene: &Scene, dir: [f64; 2], t_max: f64) -> Option<f64> {
    let o = scene.sensor_xy();
    let mut best = f64::INFINITY;
    for occ in occluders {
        if let Some(t) = occ.ray_entry(o, dir, t_max.min(best)) {
            best = best.min(t);
        }
    }
    if scene.enclosed {
        for axis in 0..2 {
            if dir[axis] != 0.0 {
                let wall = scene.bounds.copysign(dir[axis]);
                best = best.min((wall - o[axis]) / dir[axis]);
            }
        }
    }
    (best <= t_max).then_some(best)
}

fn visible(occluders: &[Occluder<'_>], scene: &Scene, target: [f64; 2]) -> bool {
    if scene.enclosed && (target[0].abs() >= scene.bounds || target[1].abs() >= scene.bounds) {
        return false;
    }
    let o = scene.sensor_xy();
    !occluders.iter().any(|occ| occ.blocks_segment(o, target))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarModel {
    /// Equally spaced azimuthal beams per sweep.
    pub n_beams: usize,
    pub max_range: f64,
    pub range_noise_sigma: f64,
    /// Probability that a beam returns nothing.
    pub dropout_prob: f64,
    /// Azimuth of beam 0 in the sensor frame, radians.
    #[serde(default)]
    pub azimuth_offset: f64,
}

impl LidarModel {
    pub fn new(n_beams: usize, max_range: f64) -> Result<Self> {
        let m = Self { n_beams, max_range, range_noise_sigma: 0.0, dropout_prob: 0.0, azimuth_offset: 0.0 };
        m.validate()?;
        Ok(m)
    }

    /// Places beams at bin centers of an `n_beams`-bin azimuth partition.
    pub fn centered(mut self) -> Self {
        self.azimuth_offset = std::f64::consts::PI / self.n_beams as f64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_beams < 8 {
            return Err(Error::config("lidar needs at least 8 beams"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::config("lidar max_range must be positive"));
        }
        if !(self.range_noise_sigma >= 0.0) {
            return Err(Error::config("lidar range noise must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("lidar dropout_prob must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn beam_azimuth(&self, i: usize) -> f64 {
        self.azimuth_offset + std::f64::consts::TAU * i as f64 / self.n_beams as f64
    }
}

/// Minimum simulated range; noisy returns are clamped here.
pub const MIN_RETURN_RANGE: f64 = 0.1;

/// One return per beam at the first surface hit, in the sensor frame, z = 0.
pub fn simulate_lidar(scene: &Scene, model: &LidarModel, seed: u64) -> Result<PointCloud<f64>> {
    scene.validate()?;
    model.validate()?;
    let occluders = scene.occluders();
    let mut rng = seed::rng(seed, &[seed::tag("lidar")]);
    let noise = Normal::new(0.0, model.range_noise_sigma.max(0.0))
        .map_err(|e| Error::config(format!("lidar noise: {e}")))?;
    let o = scene.sensor_xy();
    let mut points = Vec::with_capacity(model.n_beams);
    for i in 0..model.n_beams {
        let theta = model.beam_azimuth(i);
        // both draws happen for every beam so streams stay aligned
        let dropped = rng.random::<f64>() < model.dropout_prob;
        let eps = noise.sample(&mut rng);
        let w = scene.sensor.attitude.rotate([theta.cos(), theta.sin(), 0.0]);
        let norm = w[0].hypot(w[1]);
        if norm < 1e-12 {
            continue;
        }
        let dir = [w[0] / norm, w[1] / norm];
        let Some(t) = cast(&occluders, scene, dir, model.max_range) else { continue };
        if dropped {
            continue;
        }
        let r = if model.range_noise_sigma > 0.0 { (t + eps).max(MIN_RETURN_RANGE) } else { t.max(MIN_RETURN_RANGE) };
        let hit = [o[0] + r * dir[0], o[1] + r * dir[1], scene.sensor.position[2]];
        let mut p = scene.sensor.to_sensor(hit);
        p[2] = 0.0;
        points.push(p);
    }
    PointCloud::new(points, scene.sensor, 0)
}

/// Exact visibility at every cell center of a sensor-centred grid.
pub fn ground_truth_fov(scene: &Scene, model: &LidarModel, spec: &GridSpec) -> FovMask {
    let occluders = scene.occluders();
    let o = scene.sensor_xy();
    let n = spec.resolution;
    let cells: Vec<bool> = (0..n)
        .into_par_iter()
        .flat_map_iter(|row| {
            let occluders = &occluders;
            (0..n).map(move |col| {
                let c = spec.cell_center(row, col);
                c[0].hypot(c[1]) <= model.max_range && visible(occluders, scene, [o[0] + c[0], o[1] + c[1]])
            })
        })
        .collect();
    FovMask { spec: *spec, cells }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    OutdoorSparse,
    OutdoorDense,
    Indoor,
}

impl FamilyName {
    pub const ALL: [FamilyName; 3] = [FamilyName::OutdoorSparse, FamilyName::OutdoorDense, FamilyName::Indoor];

    pub fn as_str(&self) -> &'static str {
        match self {
            FamilyName::OutdoorSparse => "outdoor-sparse",
            FamilyName::OutdoorDense => "outdoor-dense",
            FamilyName::Indoor => "indoor",
        }
    }
}

impl std::fmt::Display for FamilyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FamilyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyName::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown scene family `{s}`")))
    }
}

/// Distribution of scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFamily {
    pub name: FamilyName,
    /// Inclusive obstacle count range.
    pub obstacle_count: [usize; 2],
    /// Obstacle footprint size range, meters.
    pub obstacle_size: [f64; 2],
    /// Scene half-width range, meters.
    pub bounds: [f64; 2],
    pub enclosed: bool,
    /// Fraction of obstacles drawn as rectangles; the rest are random convex
    /// polygons.
    pub rect_fraction: f64,
    /// Minimum distance between the sensor and any obstacle, meters.
    pub min_clearance: f64,
    pub seed: u64,
}

impl SceneFamily {
    pub fn preset(name: FamilyName) -> Self {
        match name {
            FamilyName::OutdoorSparse => Self {
                name,
                obstacle_count: [3, 8],
                obstacle_size: [1.5, 5.0],
                bounds: [22.0, 32.0],
                enclosed: true,
                rect_fraction: 0.8,
                min_clearance: 2.0,
                seed: 0x05,
            },
            FamilyName::OutdoorDense => Self {
                name,
                obstacle_count: [10, 20],
                obstacle_size: [1.5, 5.0],
                bounds: [22.0, 32.0],
                enclosed: true,
                rect_fraction: 0.8,
                min_clearance: 2.0,
                seed: 0x0d,
            },
            FamilyName::Indoor => Self {
                name,
                obstacle_count: [4, 10],
                obstacle_size: [1.0, 3.5],
                bounds: [14.0, 22.0],
                enclosed: true,
                rect_fraction: 0.5,
                min_clearance: 1.5,
                seed: 0x1d,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [c0, c1] = self.obstacle_count;
        let [s0, s1] = self.obstacle_size;
        let [b0, b1] = self.bounds;
        if c0 > c1 {
            return Err(Error::config("family obstacle_count range is empty"));
        }
        if !(s0 > 0.0 && s0 <= s1) {
            return Err(Error::config("family obstacle_size range is empty or non-positive"));
        }
        if !(b0 > 0.0 && b0 <= b1) {
            return Err(Error::config("family bounds range is empty or non-positive"));
        }
        if !(0.0..=1.0).contains(&self.rect_fraction) || !(self.min_clearance >= 0.0) {
            return Err(Error::config("family rect_fraction must lie in [0,1] and min_clearance be >= 0"));
        }
        Ok(())
    }
}

/// Maximum obstacle placements tried per scene.
pub const MAX_PLACEMENT_DRAWS: usize = 10_000;

fn uniform(rng: &mut seed::Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a scene; deterministic in `(family, seed)`.
pub fn generate_scene(family: &SceneFamily, seed: u64) -> Result<Scene> {
    family.validate()?;
    let mut rng = seed::rng(family.seed, &[seed::tag("scene"), seed]);
    let bounds = uniform(&mut rng, family.bounds);
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let sensor = Pose::new([0.0; 3], Quaternion::from_yaw(yaw))?;
    let count = rng.random_range(family.obstacle_count[0]..=family.obstacle_count[1]);
    let mut obstacles = Vec::with_capacity(count);
    let mut draws = 0;
    while obstacles.len() < count {
        draws += 1;
        if draws > MAX_PLACEMENT_DRAWS {
            return Err(Error::Infeasible(format!(
                "could not place {count} obstacles clear of the sensor in {MAX_PLACEMENT_DRAWS} draws"
            )));
        }
        let size = uniform(&mut rng, family.obstacle_size);
        let reach = (bounds - size / 2.0).max(0.0);
        let c = [rng.random_range(-reach..=reach), rng.random_range(-reach..=reach)];
        let poly = if rng.random::<f64>() < family.rect_fraction {
            let aspect = rng.random_range(0.35..1.0);
            ConvexPolygon::rectangle(c, size, size * aspect, rng.random_range(0.0..std::f64::consts::PI))
        } else {
            let k = rng.random_range(3..=7);
            let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let r = size / 2.0;
            ConvexPolygon::new(angles.iter().map(|a| [c[0] + r * a.cos(), c[1] + r * a.sin()]).collect())
        };
        // near-degenerate random polygons fail validation; redraw
        let Ok(poly) = poly else { continue };
        if poly.distance([0.0, 0.0]) < family.min_clearance.max(f64::MIN_POSITIVE) {
            continue;
        }
        obstacles.push(poly);
    }
    Scene::new(obstacles, sensor, bounds, family.enclosed)
}
