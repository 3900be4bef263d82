//! Classical field-of-view estimators: quantized and continuous ray tracing,
//! k-nearest-neighbour concave hulls, and their rasterization onto grids.

mod hull;
mod polygon;
mod raster;
mod raytrace;

use serde::{Deserialize, Serialize};

pub use hull::{concave_hull, DEFAULT_K, MIN_K};
pub use polygon::FovPolygon;
pub use raster::{polar_to_mask, rasterize_polygon};
pub use raytrace::{raytrace_continuous, raytrace_quantized, PolarFov, AZIMUTH_TOLERANCE, MIN_BINS};

use crate::error::{Error, Result};
use crate::geometry::{FovMask, GridSpec};
use crate::real::Real;

/// Default azimuth bins for quantized ray tracing.
pub const DEFAULT_BINS: usize = 360;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ClassicalMethod {
    Rayq { n_bins: usize },
    Rayc,
    Concave { k: usize },
}

impl ClassicalMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ClassicalMethod::Rayq { .. } => "rayq",
            ClassicalMethod::Rayc => "rayc",
            ClassicalMethod::Concave { .. } => "concave",
        }
    }

    /// Estimates a mask from planar points. Degenerate inputs (too few
    /// distinct points for a polygon) yield an all-invisible mask.
    pub fn estimate<T: Real>(&self, points: &[[T; 2]], spec: &GridSpec) -> Result<FovMask> {
        let poly = match *self {
            ClassicalMethod::Rayq { n_bins } => return Ok(polar_to_mask(&raytrace_quantized(points, n_bins)?, spec)),
            ClassicalMethod::Rayc => raytrace_continuous(points),
            ClassicalMethod::Concave { k } => concave_hull(points, k),
        };
        match poly {
            Ok(p) => Ok(rasterize_polygon(&p, spec)),
            Err(Error::Degenerate(_)) => Ok(FovMask::filled(*spec, false)),
            Err(e) => Err(e),
        }
    }
}

impl std::str::FromStr for ClassicalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rayq" => Ok(ClassicalMethod::Rayq { n_bins: DEFAULT_BINS }),
            "rayc" => Ok(ClassicalMethod::Rayc),
            "concave" => Ok(ClassicalMethod::Concave { k: DEFAULT_K }),
            other => Err(Error::config(format!("unknown classical method `{other}` (rayq, rayc, concave)"))),
        }
    }
}
