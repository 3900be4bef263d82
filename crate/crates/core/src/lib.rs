//! Field-of-view estimation for LiDAR point clouds.
//!
//! The crate covers the whole workflow: bird's-eye-view preprocessing
//! ([`geometry`]), synthetic scenes with exact visibility ([`scene`]),
//! classical estimators ([`classical`]), spoofing attacks and filtering
//! defenses ([`attacks`]), a from-scratch UNet with Monte Carlo dropout
//! ([`segnet`]), confidence-map anomaly detection ([`anomaly`]) and the
//! evaluation harness ([`eval`]).
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! name the concrete instantiations used by the CLI and the tests.

pub mod error;
pub mod geometry;
pub mod real;

pub use error::{Error, Result};
pub use real::Real;
pub mod attacks;
pub mod scene;
pub mod seed;
pub mod classical;
pub mod segnet;
pub mod anomaly;
pub mod eval;
pub mod config;

pub type PointCloud32 = geometry::PointCloud<f32>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type Pose64 = geometry::Pose<f64>;
pub type Network32 = segnet::Network<f32>;
pub type Network64 = segnet::Network<f64>;
pub type ProbMap32 = segnet::ProbMap<f32>;
pub type ProbMap64 = segnet::ProbMap<f64>;
pub type ConfidenceMap32 = segnet::ConfidenceMap<f32>;
pub type ConfidenceMap64 = segnet::ConfidenceMap<f64>;
pub type Example32 = segnet::Example<f32>;
pub type Example64 = segnet::Example<f64>;
