//! LiDAR spoofing injectors and the naive point-filtering defenses.
//!
//! Spoofed points are specified in the gravity-aligned, sensor-centred BEV
//! frame at height 0 and rotated into the sensor frame before being appended,
//! so they land exactly where intended after projection. Benign points are
//! never touched.

use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_to_bev, PointCloud};
use crate::real::Real;
use crate::seed;

/// Default spoof budget, in points per frame.
pub const DEFAULT_BUDGET: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Cluster,
    Uniform,
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub n_points: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Cluster mean, meters (cluster attacks).
    #[serde(default)]
    pub cluster_center: [f64; 2],
    /// Cluster spread, meters (cluster attacks).
    #[serde(default = "AttackSpec::default_sigma")]
    pub cluster_sigma: f64,
    /// Half-width of the uniform support square, meters (uniform attacks).
    #[serde(default = "AttackSpec::default_bounds")]
    pub bounds: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    fn default_sigma() -> f64 {
        2.0
    }

    fn default_bounds() -> f64 {
        75.0
    }

    pub fn uniform(n_points: usize, bounds: f64, seed: u64) -> Self {
        Self {
            kind: AttackKind::Uniform,
            n_points,
            budget: DEFAULT_BUDGET,
            cluster_center: [0.0, 0.0],
            cluster_sigma: Self::default_sigma(),
            bounds,
            seed,
        }
    }

    pub fn cluster(n_points: usize, center: [f64; 2], sigma: f64, seed: u64) -> Self {
        Self {
            kind: AttackKind::Cluster,
            n_points,
            budget: DEFAULT_BUDGET,
            cluster_center: center,
            cluster_sigma: sigma,
            bounds: Self::default_bounds(),
            seed,
        }
    }

    /// Same attack with a per-frame seed.
    pub fn for_frame(&self, frame: u64) -> Self {
        Self { seed: seed::derive(self.seed, &[seed::tag("frame"), frame]), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points > self.budget {
            return Err(Error::BudgetExceeded { requested: self.n_points, budget: self.budget });
        }
        match self.kind {
            AttackKind::Cluster if !(self.cluster_sigma >= 0.0 && self.cluster_sigma.is_finite()) => {
                Err(Error::config("cluster_sigma must be finite and non-negative"))
            }
            AttackKind::Uniform if !(self.bounds > 0.0 && self.bounds.is_finite()) => {
                Err(Error::config("uniform attack bounds must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn expect(&self, kind: AttackKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::config(format!("expected a {kind:?} attack spec, got {:?}", self.kind)));
        }
        self.validate()
    }
}

fn append_bev<T: Real>(cloud: &PointCloud<T>, bev: impl IntoIterator<Item = [f64; 2]>) -> PointCloud<T> {
    let q = cloud.pose.attitude;
    let mut out = cloud.clone();
    out.points.extend(bev.into_iter().map(|[x, y]| q.inverse_rotate([T::of(x), T::of(y), T::zero()])));
    out
}

fn gaussian_points(center: [f64; 2], sigma: f64, n: usize, rng: &mut seed::Rng) -> Vec<[f64; 2]> {
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    (0..n)
        .map(|_| [center[0] + normal.sample(rng), center[1] + normal.sample(rng)])
        .collect()
}

/// Appends `n_points` Gaussian samples around `cluster_center`.
pub fn spoof_cluster<T: Real>(cloud: &PointCloud<T>, spec: &AttackSpec) -> Result<PointCloud<T>> {
    spec.expect(AttackKind::Cluster)?;
    let mut rng = seed::rng(spec.seed, &[seed::tag("spoof-cluster")]);
    Ok(append_bev(cloud, gaussian_points(spec.cluster_center, spec.cluster_sigma, spec.n_points, &mut rng)))
}

/// Appends `n_points` samples uniform on `[-bounds, bounds]^2`.
pub fn spoof_uniform<T: Real>(cloud: &PointCloud<T>, spec: &AttackSpec) -> Result<PointCloud<T>> {
    spec.expect(AttackKind::Uniform)?;
    let mut rng = seed::rng(spec.seed, &[seed::tag("spoof-uniform")]);
    let b = spec.bounds;
    let pts: Vec<[f64; 2]> = (0..spec.n_points)
        .map(|_| [rng.random_range(-b..b), rng.random_range(-b..b)])
        .collect();
    Ok(append_bev(cloud, pts))
}

/// Dispatches on `spec.kind`.
pub fn spoof<T: Real>(cloud: &PointCloud<T>, spec: &AttackSpec) -> Result<PointCloud<T>> {
    match spec.kind {
        AttackKind::Cluster => spoof_cluster(cloud, spec),
        AttackKind::Uniform => spoof_uniform(cloud, spec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSpec {
    pub max_range: f64,
    pub isolation_radius: f64,
    pub min_neighbors: usize,
    pub cluster_min_size: usize,
    #[serde(default = "yes")]
    pub range_check: bool,
    #[serde(default = "yes")]
    pub isolation_filter: bool,
    #[serde(default = "yes")]
    pub cluster_filter: bool,
}

fn yes() -> bool {
    true
}

impl Default for DefenseSpec {
    fn default() -> Self {
        Self {
            max_range: 75.0,
            isolation_radius: 1.0,
            min_neighbors: 2,
            cluster_min_size: 5,
            range_check: true,
            isolation_filter: true,
            cluster_filter: true,
        }
    }
}

impl DefenseSpec {
    pub fn disabled() -> Self {
        Self { range_check: false, isolation_filter: false, cluster_filter: false, ..Self::default() }
    }

    pub fn is_disabled(&self) -> bool {
        !(self.range_check || self.isolation_filter || self.cluster_filter)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0 && self.isolation_radius > 0.0) || self.min_neighbors == 0 || self.cluster_min_size == 0
        {
            return Err(Error::config("defense parameters must all be positive"));
        }
        Ok(())
    }
}

/// Fixed-radius neighbor lookup over planar points.
struct NeighborGrid<'a> {
    pts: &'a [[f64; 2]],
    radius: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> NeighborGrid<'a> {
    fn new(pts: &'a [[f64; 2]], alive: &[bool], radius: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in pts.iter().enumerate().filter(|(i, _)| alive[*i]) {
            cells.entry(Self::key(p, radius)).or_default().push(i);
        }
        Self { pts, radius, cells }
    }

    fn key(p: &[f64; 2], radius: f64) -> (i64, i64) {
        ((p[0] / radius).floor() as i64, (p[1] / radius).floor() as i64)
    }

    /// Live points within `radius` of point `i`, excluding `i`.
    fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let p = self.pts[i];
        let (cx, cy) = Self::key(&p, self.radius);
        let r2 = self.radius * self.radius;
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (cx + dx, cy + dy)))
            .filter_map(|k| self.cells.get(&k))
            .flatten()
            .copied()
            .filter(move |&j| {
                let q = self.pts[j];
                j != i && (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) <= r2
            })
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Runs the enabled stages in order: range check, isolated-point removal
/// (repeated until stable), then removal of small connected components.
pub fn defend<T: Real>(cloud: &PointCloud<T>, spec: &DefenseSpec) -> Result<PointCloud<T>> {
    spec.validate()?;
    let planar: Vec<[f64; 2]> = project_to_bev(cloud)?.iter().map(|p| [p.xy[0].f64(), p.xy[1].f64()]).collect();
    let n = planar.len();
    let mut alive = vec![true; n];

    if spec.range_check {
        for (a, p) in alive.iter_mut().zip(&planar) {
            *a = p[0].hypot(p[1]) <= spec.max_range;
        }
    }

    if spec.isolation_filter {
        loop {
            let grid = NeighborGrid::new(&planar, &alive, spec.isolation_radius);
            let drop: Vec<usize> = (0..n)
                .filter(|&i| alive[i] && grid.neighbors(i).take(spec.min_neighbors).count() < spec.min_neighbors)
                .collect();
            if drop.is_empty() {
                break;
            }
            for i in drop {
                alive[i] = false;
            }
        }
    }

    if spec.cluster_filter {
        let grid = NeighborGrid::new(&planar, &alive, spec.isolation_radius);
        let mut parent: Vec<usize> = (0..n).collect();
        for i in (0..n).filter(|&i| alive[i]) {
            for j in grid.neighbors(i).filter(|&j| j > i) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut size = vec![0usize; n];
        for i in (0..n).filter(|&i| alive[i]) {
            let r = find(&mut parent, i);
            size[r] += 1;
        }
        for i in 0..n {
            if alive[i] && size[find(&mut parent, i)] < spec.cluster_min_size {
                alive[i] = false;
            }
        }
    }

    let mut out = cloud.clone();
    out.points = cloud.points.iter().zip(&alive).filter(|(_, &a)| a).map(|(p, _)| *p).collect();
    Ok(out)
}

/// Cluster attack shaped to survive [`defend`]: points are grouped in
/// mini-clusters small enough that every member sees all others within the
/// isolation radius, and large enough to pass the component-size filter.
pub fn adaptive_spoof<T: Real>(
    cloud: &PointCloud<T>,
    defense: &DefenseSpec,
    spec: &AttackSpec,
) -> Result<PointCloud<T>> {
    spec.expect(AttackKind::Cluster)?;
    if defense.is_disabled() {
        return spoof_cluster(cloud, spec);
    }
    defense.validate()?;
    let group = defense.cluster_min_size.max(defense.min_neighbors + 1);
    if group > spec.budget {
        return Err(Error::Infeasible(format!(
            "a surviving cluster needs {group} points but the budget is {}",
            spec.budget
        )));
    }
    if spec.n_points == 0 {
        return Ok(cloud.clone());
    }
    if group > spec.n_points {
        return Err(Error::Infeasible(format!(
            "a surviving cluster needs {group} points but only {} are requested",
            spec.n_points
        )));
    }
    let mut rng = seed::rng(spec.seed, &[seed::tag("spoof-adaptive")]);
    // members stay within this radius of their group center, so pairwise
    // distances stay below the isolation radius
    let spread = 0.45 * defense.isolation_radius;
    let reach = if defense.range_check { defense.max_range - spread } else { f64::INFINITY };
    if reach <= 0.0 {
        return Err(Error::Infeasible("range check leaves no room for a cluster".into()));
    }
    let n_groups = spec.n_points / group;
    let centers = gaussian_points(spec.cluster_center, spec.cluster_sigma, n_groups, &mut rng);
    let mut pts = Vec::with_capacity(spec.n_points);
    for (g, c) in centers.iter().enumerate() {
        let r = c[0].hypot(c[1]);
        let c = if r > reach { [c[0] * reach / r, c[1] * reach / r] } else { *c };
        let members = if g + 1 == n_groups { spec.n_points - group * (n_groups - 1) } else { group };
        for _ in 0..members {
            let rho = spread * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            pts.push([c[0] + rho * phi.cos(), c[1] + rho * phi.sin()]);
        }
    }
    Ok(append_bev(cloud, pts))
}
