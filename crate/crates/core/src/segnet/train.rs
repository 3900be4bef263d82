use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bce, mask_target, normalize_counts, Network};
use crate::error::{Error, Result};
use crate::geometry::{BevImage, FovMask};
use crate::real::Real;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, max_epochs: 30, batch_size: 10, patience: 5, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::config("max_epochs, batch_size and patience must be positive"));
        }
        Ok(())
    }
}

/// A normalized input plane and its 0/1 target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub input: Vec<T>,
    pub target: Vec<T>,
}

impl<T: Real> Example<T> {
    pub fn new(image: &BevImage, mask: &FovMask) -> Result<Self> {
        if image.spec.resolution != mask.spec.resolution {
            return Err(Error::shape(image.spec.resolution, mask.spec.resolution));
        }
        Ok(Self { input: normalize_counts(image), target: mask_target(mask) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Patience {
    Improved,
    Waiting,
    Stop,
}

/// Tracks the best validation loss; stops after `patience` epochs without a
/// strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    waited: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: None, waited: 0, epoch: 0 }
    }

    pub fn update(&mut self, val_loss: f64) -> Patience {
        let epoch = self.epoch;
        self.epoch += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.waited = 0;
            return Patience::Improved;
        }
        self.waited += 1;
        if self.waited >= self.patience {
            Patience::Stop
        } else {
            Patience::Waiting
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the best validation epoch.
    pub network: Network<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Adam<T> {
    lr: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { lr: T::of(lr), m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let (b1, b2) = (T::of(Self::BETA1), T::of(Self::BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let eps = T::of(Self::EPS);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

fn mean_loss<T: Real>(net: &Network<T>, set: &[Example<T>]) -> Result<f64> {
    let losses: Vec<f64> = set
        .par_iter()
        .map(|ex| Ok(bce(&net.forward_normalized(&ex.input, None)?, &ex.target)?.f64()))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn train<T: Real>(
    net: Network<T>,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(net, train_set, val_set, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Real>(
    mut net: Network<T>,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training needs non-empty train and validation sets"));
    }
    let mut adam = Adam::new(net.num_params(), cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = net.params().to_vec();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut seed::rng(cfg.seed, &[seed::tag("shuffle"), epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(T, Vec<T>)> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    let s = seed::derive(cfg.seed, &[seed::tag("dropout"), epoch as u64, i as u64]);
                    net.loss_and_gradient(&ex.input, &ex.target, Some(s))
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![T::zero(); net.num_params()];
            for (loss, g) in &results {
                let l = loss.f64();
                if !l.is_finite() {
                    return Err(Error::Numeric(format!("non-finite training loss {l} at epoch {epoch}")));
                }
                loss_sum += l;
                for (a, &b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let inv = T::one() / T::of(batch.len() as f64);
            for g in &mut grad {
                *g *= inv;
            }
            adam.step(net.params_mut(), &grad);
        }
        let val_loss = mean_loss(&net, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss {val_loss} at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
        match stopper.update(val_loss) {
            Patience::Improved => best.copy_from_slice(net.params()),
            Patience::Waiting => {}
            Patience::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    net.params_mut().copy_from_slice(&best);
    Ok(TrainOutcome {
        network: net,
        history,
        best_epoch: stopper.best_epoch().expect("at least one epoch ran"),
        stopped_early,
    })
}
