//! Attack detection from Monte Carlo dropout confidence maps.
//!
//! A frame's score is the fraction of cells whose sigma exceeds a per-cell
//! threshold; both thresholds are nearest-rank quantiles of benign data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::segnet::ConfidenceMap;

/// Fewest benign maps [`calibrate`] accepts.
pub const MIN_CALIBRATION_MAPS: usize = 20;

pub const DEFAULT_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyModel {
    pub tau_cell: f64,
    pub tau_image: f64,
    pub quantile: f64,
    pub calibration_size: usize,
}

impl AnomalyModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if !(model.tau_cell >= 0.0 && (0.0..=1.0).contains(&model.tau_image)) {
            return Err(Error::format("anomaly model", "thresholds out of range"));
        }
        Ok(model)
    }
}

/// Fraction of cells with sigma strictly above `tau_cell`.
pub fn score<T: Real>(conf: &ConfidenceMap<T>, tau_cell: f64) -> f64 {
    if conf.sigma.is_empty() {
        return 0.0;
    }
    let hot = conf.sigma.iter().filter(|s| s.f64() > tau_cell).count();
    hot as f64 / conf.sigma.len() as f64
}

/// Nearest-rank `q`-quantile: the smallest value with at least `q * n`
/// values at or below it.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn calibrate<T: Real>(benign: &[ConfidenceMap<T>], q: f64) -> Result<AnomalyModel> {
    if benign.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    if benign.len() < MIN_CALIBRATION_MAPS {
        return Err(Error::invalid(format!(
            "calibration needs at least {MIN_CALIBRATION_MAPS} benign maps, got {}",
            benign.len()
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::config(format!("quantile must be in (0, 1), got {q}")));
    }
    let mut pooled: Vec<f64> = benign.iter().flat_map(|c| c.sigma.iter().map(|s| s.f64())).collect();
    if pooled.is_empty() {
        return Err(Error::invalid("calibration maps have no cells"));
    }
    if pooled.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite sigma in calibration set".into()));
    }
    pooled.sort_by(f64::total_cmp);
    let tau_cell = nearest_rank(&pooled, q).max(0.0);
    let mut scores: Vec<f64> = benign.iter().map(|c| score(c, tau_cell)).collect();
    scores.sort_by(f64::total_cmp);
    Ok(AnomalyModel { tau_cell, tau_image: nearest_rank(&scores, q), quantile: q, calibration_size: benign.len() })
}

/// `(score, flagged)`; flagged iff the score is strictly above `tau_image`.
pub fn detect<T: Real>(conf: &ConfidenceMap<T>, model: &AnomalyModel) -> (f64, bool) {
    let s = score(conf, model.tau_cell);
    (s, s > model.tau_image)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for the first sample tending larger.
    pub p_value: f64,
}

/// Mann–Whitney U test, normal approximation with tie and continuity
/// corrections.
pub fn mann_whitney(first: &[f64], second: &[f64]) -> Result<MannWhitney> {
    let (n1, n2) = (first.len(), second.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("Mann-Whitney needs two non-empty samples"));
    }
    let mut all: Vec<(f64, bool)> = first.iter().map(|&v| (v, true)).chain(second.iter().map(|&v| (v, false))).collect();
    if all.iter().any(|(v, _)| v.is_nan()) {
        return Err(Error::invalid("Mann-Whitney sample contains NaN"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum += all[i..=j].iter().filter(|(_, f)| *f).count() as f64 * avg;
        i = j + 1;
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let u = rank_sum - a * (a + 1.0) / 2.0;
    let mean = a * b / 2.0;
    let nf = n as f64;
    let var = a * b / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, z: 0.0, p_value: 0.5 });
    }
    let z = (u - mean - 0.5) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(MannWhitney { u, z, p_value: 1.0 - std_normal.cdf(z) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;

    fn map(sigma: Vec<f64>) -> ConfidenceMap<f64> {
        let n = (sigma.len() as f64).sqrt() as usize;
        ConfidenceMap { spec: GridSpec::new(1.0, n.max(8)).unwrap(), sigma }
    }

    #[test]
    fn score_extremes() {
        assert_eq!(score(&map(vec![0.0; 64]), 0.0), 0.0);
        assert_eq!(score(&map(vec![0.3; 64]), 0.1), 1.0);
    }

    #[test]
    fn nearest_rank_definition() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.99), 99.0);
        assert_eq!(nearest_rank(&v, 0.995), 100.0);
        assert_eq!(nearest_rank(&v, 0.001), 1.0);
    }

    #[test]
    fn identical_sigmas_calibrate_to_zero_scores() {
        let maps: Vec<_> = (0..25).map(|_| map(vec![0.2; 64])).collect();
        let m = calibrate(&maps, 0.99).unwrap();
        assert_eq!(m.tau_cell, 0.2);
        assert_eq!(m.tau_image, 0.0);
        assert!(maps.iter().all(|c| detect(c, &m) == (0.0, false)));
        assert!(calibrate::<f64>(&[], 0.99).is_err());
        assert!(calibrate(&maps[..5], 0.99).is_err());
    }

    #[test]
    fn saturated_map_is_flagged() {
        let m = AnomalyModel { tau_cell: 0.1, tau_image: 0.5, quantile: 0.99, calibration_size: 20 };
        assert_eq!(detect(&map(vec![1.0; 64]), &m), (1.0, true));
        assert_eq!(detect(&map(vec![0.0; 64]), &m), (0.0, false));
    }

    #[test]
    fn mann_whitney_reference() {
        // U for the first sample counts pairs where it wins, ties count half
        let r = mann_whitney(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.u, 8.5);
        let sep: Vec<f64> = (0..30).map(|i| 100.0 + i as f64).collect();
        let low: Vec<f64> = (0..30).map(f64::from).collect();
        assert!(mann_whitney(&sep, &low).unwrap().p_value < 1e-6);
        assert!(mann_whitney(&low, &sep).unwrap().p_value > 0.99);
        assert!(mann_whitney(&[], &low).is_err());
    }
}
