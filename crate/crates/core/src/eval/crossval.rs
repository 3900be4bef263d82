use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::seed;
use crate::segnet::{self, Example, NetConfig, Network, TrainConfig};

/// The hyperparameter grid searched by cross-validation.
pub struct SearchGrid {
    pub base_channels: [usize; 4],
    pub dropout_rate: [f64; 3],
    pub learning_rate: [f64; 3],
}

pub const SEARCH_GRID: SearchGrid = SearchGrid {
    base_channels: [4, 8, 16, 32],
    dropout_rate: [0.05, 0.10, 0.15],
    learning_rate: [1e-4, 1e-3, 1e-2],
};

impl SearchGrid {
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for &base_channels in &self.base_channels {
            for &dropout_rate in &self.dropout_rate {
                for &learning_rate in &self.learning_rate {
                    out.push(Candidate { base_channels, dropout_rate, learning_rate });
                }
            }
        }
        out
    }

    pub fn contains(&self, c: &Candidate) -> bool {
        self.base_channels.contains(&c.base_channels)
            && self.dropout_rate.contains(&c.dropout_rate)
            && self.learning_rate.contains(&c.learning_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub fold: usize,
    pub val_loss: f64,
}

impl FoldRow {
    pub fn candidate(&self) -> Candidate {
        Candidate { base_channels: self.base_channels, dropout_rate: self.dropout_rate, learning_rate: self.learning_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValResult {
    pub best: Candidate,
    pub best_mean_loss: f64,
    pub rows: Vec<FoldRow>,
}

/// Seeded shuffle, then `folds` contiguous chunks whose sizes differ by at
/// most one.
pub fn fold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::invalid(format!("{n} samples cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &[seed::tag("folds")]));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// K-fold search over `candidates`. `fit(candidate, train, val, cell_seed)`
/// trains on the `train` indices and returns the validation loss on `val`.
/// Lowest mean loss wins; ties go to the smaller `size`, then the lower
/// learning rate.
pub fn crossval<F, S>(
    n: usize,
    candidates: &[Candidate],
    folds: usize,
    seed: u64,
    size: S,
    fit: F,
) -> Result<CrossValResult>
where
    F: Fn(&Candidate, &[usize], &[usize], u64) -> Result<f64> + Sync,
    S: Fn(&Candidate) -> usize,
{
    if candidates.is_empty() {
        return Err(Error::config("cross-validation grid is empty"));
    }
    if let Some(c) = candidates.iter().find(|c| !SEARCH_GRID.contains(c)) {
        return Err(Error::config(format!("candidate {c:?} is outside the search grid")));
    }
    let split = fold_split(n, folds, seed)?;
    let cells: Vec<(usize, usize)> = (0..candidates.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let losses: Vec<f64> = cells
        .par_iter()
        .map(|&(c, f)| {
            let train: Vec<usize> = split.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
            let cell_seed = seed::derive(seed, &[c as u64, f as u64]);
            fit(&candidates[c], &train, &split[f], cell_seed)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<FoldRow> = cells
        .iter()
        .zip(&losses)
        .map(|(&(c, fold), &val_loss)| {
            let Candidate { base_channels, dropout_rate, learning_rate } = candidates[c];
            FoldRow { base_channels, dropout_rate, learning_rate, fold, val_loss }
        })
        .collect();
    let means: Vec<f64> = losses.chunks(folds).map(|ch| ch.iter().sum::<f64>() / folds as f64).collect();
    let best = (0..candidates.len())
        .min_by(|&a, &b| {
            means[a]
                .total_cmp(&means[b])
                .then(size(&candidates[a]).cmp(&size(&candidates[b])))
                .then(candidates[a].learning_rate.total_cmp(&candidates[b].learning_rate))
        })
        .expect("non-empty grid");
    Ok(CrossValResult { best: candidates[best], best_mean_loss: means[best], rows })
}

/// Cross-validates UNet hyperparameters; `template` fixes depth and
/// resolution, `train_cfg` everything but the learning rate and seed.
pub fn crossval_segnet<T: Real>(
    examples: &[Example<T>],
    candidates: &[Candidate],
    template: NetConfig,
    train_cfg: TrainConfig,
    folds: usize,
    seed: u64,
) -> Result<CrossValResult> {
    let config = |c: &Candidate| NetConfig { base_channels: c.base_channels, dropout_rate: c.dropout_rate, ..template };
    crossval(
        examples.len(),
        candidates,
        folds,
        seed,
        |c| segnet::param_count(&config(c)),
        |c, train, val, cell_seed| {
            let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
            let (train, val) = (pick(train), pick(val));
            let net = Network::<T>::new(config(c), cell_seed)?;
            let cfg = TrainConfig { learning_rate: c.learning_rate, seed: cell_seed, ..train_cfg };
            let out = segnet::train(net, &train, &val, &cfg)?;
            Ok(out.history[out.best_epoch].val_loss)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_the_samples() {
        let f = fold_split(23, 5, 1).unwrap();
        let sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut all: Vec<usize> = f.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(f, fold_split(23, 5, 1).unwrap());
        assert!(fold_split(3, 5, 1).is_err());
    }

    #[test]
    fn single_candidate_gives_one_row_per_fold() {
        let c = Candidate { base_channels: 8, dropout_rate: 0.1, learning_rate: 1e-3 };
        let r = crossval(10, &[c], 5, 0, |_| 0, |_, _, val, _| Ok(val.len() as f64)).unwrap();
        assert_eq!(r.best, c);
        assert_eq!(r.rows.len(), 5);
    }

    #[test]
    fn ties_prefer_small_then_slow() {
        let grid = SEARCH_GRID.candidates();
        let r = crossval(10, &grid, 2, 0, |c| c.base_channels, |_, _, _, _| Ok(1.0)).unwrap();
        assert_eq!(r.best.base_channels, 4);
        assert_eq!(r.best.learning_rate, 1e-4);
        let off = Candidate { base_channels: 5, dropout_rate: 0.1, learning_rate: 1e-3 };
        assert!(crossval(10, &[off], 2, 0, |_| 0, |_, _, _, _| Ok(0.0)).is_err());
    }
}
