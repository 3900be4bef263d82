//! Compact UNet for BEV visibility segmentation, with hand-written
//! backpropagation, Adam training and Monte Carlo dropout inference.
//!
//! Layout: `depth` encoder blocks (two 3x3 conv + ReLU, then dropout) with
//! 2x2 max pooling after each, a bottleneck block, then per level a nearest
//! 2x upsample, a 3x3 conv halving the channels, concatenation with the skip
//! and another block. A 1x1 conv and a sigmoid produce the probability map.

mod io;
pub mod ops;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BevImage, FovMask, GridSpec};
use crate::real::Real;
use crate::seed;

pub use io::{write_history, NET_MAGIC, NET_VERSION};
pub use ops::{ConvSpec, Tensor};
pub use train::{train, train_with, EarlyStopping, EpochRecord, Example, Patience, TrainConfig, TrainOutcome};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

/// Default binarization threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub resolution: usize,
}

impl NetConfig {
    pub const DEPTH_RANGE: std::ops::RangeInclusive<usize> = 3..=6;
    pub const MAX_BASE_CHANNELS: usize = 64;

    pub fn new(depth: usize, base_channels: usize, dropout_rate: f64, resolution: usize) -> Result<Self> {
        let cfg = Self { depth, base_channels, dropout_rate, resolution };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !Self::DEPTH_RANGE.contains(&self.depth) {
            return Err(Error::config(format!("depth must be in 3..=6, got {}", self.depth)));
        }
        if self.base_channels == 0 || self.base_channels > Self::MAX_BASE_CHANNELS {
            return Err(Error::config(format!(
                "base_channels must be in 1..={}, got {}",
                Self::MAX_BASE_CHANNELS,
                self.base_channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        let stride = 1usize << self.depth;
        if self.resolution == 0 || self.resolution % stride != 0 {
            return Err(Error::config(format!(
                "resolution {} is not divisible by 2^depth = {stride}",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Channels at encoder level `level`; level `depth` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Convolutions in parameter order: encoder `a, b` per level, bottleneck
/// `a, b`, decoder `up, a, b` from the deepest level up, then the head.
pub fn layer_specs(cfg: &NetConfig) -> Vec<ConvSpec> {
    let mut specs = Vec::with_capacity(3 * cfg.depth + 3 + 2 * cfg.depth);
    let mut offset = 0;
    let mut push = |c_in: usize, c_out: usize, kernel: usize| {
        let spec = ConvSpec {
            c_in,
            c_out,
            kernel,
            weight_offset: offset,
            bias_offset: offset + c_out * c_in * kernel * kernel,
        };
        offset += spec.param_len();
        specs.push(spec);
    };
    let mut c_in = 1;
    for level in 0..=cfg.depth {
        let c = cfg.channels(level);
        push(c_in, c, 3);
        push(c, c, 3);
        c_in = c;
    }
    for level in (0..cfg.depth).rev() {
        let c = cfg.channels(level);
        push(cfg.channels(level + 1), c, 3);
        push(2 * c, c, 3);
        push(c, c, 3);
    }
    push(cfg.channels(0), 1, 1);
    specs
}

pub fn param_count(cfg: &NetConfig) -> usize {
    layer_specs(cfg).iter().map(ConvSpec::param_len).sum()
}

/// Per-cell visibility probabilities on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T> {
    pub spec: GridSpec,
    pub values: Vec<T>,
}

/// Per-cell standard deviation across Monte Carlo dropout passes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap<T> {
    pub spec: GridSpec,
    pub sigma: Vec<T>,
}

impl<T: Real> ConfidenceMap<T> {
    pub fn mean(&self) -> f64 {
        if self.sigma.is_empty() {
            return 0.0;
        }
        self.sigma.iter().map(|v| v.f64()).sum::<f64>() / self.sigma.len() as f64
    }
}

/// Visible iff the probability is strictly above `threshold`.
pub fn binarize<T: Real>(pm: &ProbMap<T>, threshold: f64) -> Result<FovMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let t = T::of(threshold);
    Ok(FovMask { spec: pm.spec, cells: pm.values.iter().map(|&p| p > t).collect() })
}

/// `log1p` of the counts, scaled so the largest cell is 1.
pub fn normalize_counts<T: Real>(image: &BevImage) -> Vec<T> {
    let logs: Vec<f64> = image.counts.iter().map(|&c| (c as f64).ln_1p()).collect();
    let max = logs.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![T::zero(); logs.len()];
    }
    logs.into_iter().map(|v| T::of(v / max)).collect()
}

pub fn mask_target<T: Real>(mask: &FovMask) -> Vec<T> {
    mask.cells.iter().map(|&v| if v { T::one() } else { T::zero() }).collect()
}

/// Mean binary cross-entropy with clamped predictions.
pub fn bce<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!("{} targets", pred.len()), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::invalid("loss over an empty map"));
    }
    let lo = T::of(BCE_EPS);
    let hi = T::one() - lo;
    let sum: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.max(lo).min(hi);
            -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
        })
        .sum();
    Ok(sum / T::of(pred.len() as f64))
}

pub fn loss_bce<T: Real>(pred: &ProbMap<T>, target: &FovMask) -> Result<T> {
    if pred.spec.resolution != target.spec.resolution {
        return Err(Error::shape(pred.spec.resolution, target.spec.resolution));
    }
    bce(&pred.values, &mask_target::<T>(target))
}

struct BlockTrace<T> {
    input: Tensor<T>,
    a: Tensor<T>,
    b: Tensor<T>,
    mask: Option<Vec<T>>,
}

struct DecoderTrace<T> {
    up: Tensor<T>,
    block: BlockTrace<T>,
}

struct Trace<T> {
    encoder: Vec<BlockTrace<T>>,
    pools: Vec<Vec<u32>>,
    bottleneck: BlockTrace<T>,
    decoder: Vec<DecoderTrace<T>>,
    head_input: Tensor<T>,
    prob: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: NetConfig,
    layers: Vec<ConvSpec>,
    params: Vec<T>,
}

impl<T: Real> Network<T> {
    /// He-uniform weights, zero biases.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        use rand::Rng as _;
        let mut net = Self::zeros(config)?;
        let mut rng = seed::rng(seed, &[seed::tag("init")]);
        for spec in &net.layers {
            let fan_in = (spec.c_in * spec.kernel * spec.kernel) as f64;
            let limit = (6.0 / fan_in).sqrt();
            for w in &mut net.params[spec.weight_offset..][..spec.weight_len()] {
                *w = T::of(rng.random_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layers = layer_specs(&config);
        let n = layers.iter().map(ConvSpec::param_len).sum();
        Ok(Self { config, layers, params: vec![T::zero(); n] })
    }

    pub fn from_params(config: NetConfig, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(format!("{} parameters", net.params.len()), params.len()));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config,
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        let n = self.config.resolution * self.config.resolution;
        if len != n {
            return Err(Error::shape(format!("{n} input cells"), len));
        }
        Ok(())
    }

    /// Probabilities for a count image. `dropout` carries the seed of the
    /// dropout masks; `None` runs deterministically.
    pub fn forward(&self, image: &BevImage, dropout: Option<u64>) -> Result<ProbMap<T>> {
        if image.spec.resolution != self.config.resolution {
            return Err(Error::shape(
                format!("resolution {}", self.config.resolution),
                image.spec.resolution,
            ));
        }
        let values = self.forward_normalized(&normalize_counts(image), dropout)?;
        Ok(ProbMap { spec: image.spec, values })
    }

    /// Forward pass on an already normalized input plane.
    pub fn forward_normalized(&self, input: &[T], dropout: Option<u64>) -> Result<Vec<T>> {
        self.check_input(input.len())?;
        Ok(self.run(input, dropout).prob)
    }

    /// Mean BCE loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, input: &[T], target: &[T], dropout: Option<u64>) -> Result<(T, Vec<T>)> {
        self.check_input(input.len())?;
        self.check_input(target.len())?;
        let trace = self.run(input, dropout);
        let loss = bce(&trace.prob, target)?;
        let grad = self.backward(trace, target);
        Ok((loss, grad))
    }

    fn conv(&self, i: usize, x: &Tensor<T>) -> Tensor<T> {
        ops::conv_forward(&self.layers[i], &self.params, x)
    }

    fn block(&self, first: usize, input: Tensor<T>, rng: Option<&mut seed::Rng>) -> BlockTrace<T> {
        let mut a = self.conv(first, &input);
        ops::relu_inplace(&mut a);
        let mut b = self.conv(first + 1, &a);
        ops::relu_inplace(&mut b);
        let mask = rng
            .filter(|_| self.config.dropout_rate > 0.0)
            .map(|r| ops::dropout_mask(b.data.len(), self.config.dropout_rate, r));
        BlockTrace { input, a, b, mask }
    }

    fn block_output(block: &BlockTrace<T>) -> Tensor<T> {
        let mut out = block.b.clone();
        if let Some(m) = &block.mask {
            ops::scale_inplace(&mut out, m);
        }
        out
    }

    fn run(&self, input: &[T], dropout: Option<u64>) -> Trace<T> {
        let cfg = &self.config;
        let n = cfg.resolution;
        let mut rng = dropout.map(|s| seed::rng(s, &[seed::tag("dropout")]));
        let mut x = Tensor::from_vec(1, n, n, input.to_vec());
        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut pools = Vec::with_capacity(cfg.depth);
        let mut skips = Vec::with_capacity(cfg.depth);
        for level in 0..cfg.depth {
            let block = self.block(2 * level, x, rng.as_mut());
            let out = Self::block_output(&block);
            let (pooled, arg) = ops::maxpool(&out);
            skips.push(out);
            encoder.push(block);
            pools.push(arg);
            x = pooled;
        }
        let bottleneck = self.block(2 * cfg.depth, x, rng.as_mut());
        let mut x = Self::block_output(&bottleneck);
        let mut decoder = Vec::with_capacity(cfg.depth);
        for (step, level) in (0..cfg.depth).rev().enumerate() {
            let first = 2 * cfg.depth + 2 + 3 * step;
            let up = ops::upsample(&x);
            let u = self.conv(first, &up);
            let cat = ops::concat(&u, &skips[level]);
            let block = self.block(first + 1, cat, rng.as_mut());
            x = Self::block_output(&block);
            decoder.push(DecoderTrace { up, block });
        }
        let head = self.layers.len() - 1;
        let z = self.conv(head, &x);
        let prob = z.data.iter().map(|&v| ops::sigmoid(v)).collect();
        Trace { encoder, pools, bottleneck, decoder, head_input: x, prob }
    }

    /// Returns the gradient of the block input and accumulates parameters.
    fn block_backward(&self, first: usize, block: BlockTrace<T>, mut dy: Tensor<T>, grad: &mut [T]) -> Tensor<T> {
        if let Some(m) = &block.mask {
            ops::scale_inplace(&mut dy, m);
        }
        ops::relu_backward(&block.b, &mut dy);
        let mut da = ops::conv_backward(&self.layers[first + 1], &self.params, &block.a, &dy, grad);
        ops::relu_backward(&block.a, &mut da);
        ops::conv_backward(&self.layers[first], &self.params, &block.input, &da, grad)
    }

    fn backward(&self, trace: Trace<T>, target: &[T]) -> Vec<T> {
        let cfg = &self.config;
        let n = cfg.resolution;
        let mut grad = vec![T::zero(); self.params.len()];
        let lo = T::of(BCE_EPS);
        let hi = T::one() - lo;
        let scale = T::one() / T::of(target.len() as f64);
        // sigmoid and BCE fused; clamped cells have zero gradient
        let dz: Vec<T> = trace
            .prob
            .iter()
            .zip(target)
            .map(|(&p, &t)| if p < lo || p > hi { T::zero() } else { (p - t) * scale })
            .collect();
        let head = self.layers.len() - 1;
        let mut dx = ops::conv_backward(
            &self.layers[head],
            &self.params,
            &trace.head_input,
            &Tensor::from_vec(1, n, n, dz),
            &mut grad,
        );
        let mut dskips: Vec<Option<Tensor<T>>> = (0..cfg.depth).map(|_| None).collect();
        for (step, dec) in trace.decoder.into_iter().enumerate().rev() {
            let level = cfg.depth - 1 - step;
            let first = 2 * cfg.depth + 2 + 3 * step;
            let dcat = self.block_backward(first + 1, dec.block, dx, &mut grad);
            let (du, dskip) = ops::split(dcat, cfg.channels(level));
            dskips[level] = Some(dskip);
            let dup = ops::conv_backward(&self.layers[first], &self.params, &dec.up, &du, &mut grad);
            dx = ops::upsample_backward(&dup);
        }
        dx = self.block_backward(2 * cfg.depth, trace.bottleneck, dx, &mut grad);
        for (level, block) in trace.encoder.into_iter().enumerate().rev() {
            let (c, h, w) = (block.b.c, block.b.h, block.b.w);
            let mut dout = ops::maxpool_backward(&trace.pools[level], &dx, c, h, w);
            let dskip = dskips[level].take().expect("decoder visits every level");
            for (g, &s) in dout.data.iter_mut().zip(&dskip.data) {
                *g += s;
            }
            dx = self.block_backward(2 * level, block, dout, &mut grad);
        }
        grad
    }
}

pub fn infer_mle<T: Real>(net: &Network<T>, image: &BevImage) -> Result<ProbMap<T>> {
    net.forward(image, None)
}

/// `passes` stochastic forward passes; returns the per-cell mean and
/// population standard deviation.
pub fn infer_mcd<T: Real>(
    net: &Network<T>,
    image: &BevImage,
    passes: usize,
    seed: u64,
) -> Result<(ProbMap<T>, ConfidenceMap<T>)> {
    if passes == 0 {
        return Err(Error::config("MC dropout needs at least one pass"));
    }
    if image.spec.resolution != net.config.resolution {
        return Err(Error::shape(format!("resolution {}", net.config.resolution), image.spec.resolution));
    }
    let input = normalize_counts::<T>(image);
    let outputs: Vec<Vec<T>> = (0..passes)
        .into_par_iter()
        .map(|i| net.run(&input, Some(seed::derive(seed, &[i as u64]))).prob)
        .collect();
    let cells = input.len();
    let mut mean = vec![T::zero(); cells];
    let mut m2 = vec![T::zero(); cells];
    for (k, out) in outputs.iter().enumerate() {
        let count = T::of((k + 1) as f64);
        for ((m, s), &v) in mean.iter_mut().zip(&mut m2).zip(out) {
            let delta = v - *m;
            *m += delta / count;
            *s += delta * (v - *m);
        }
    }
    let t = T::of(passes as f64);
    let sigma = m2.into_iter().map(|s| (s / t).max(T::zero()).sqrt()).collect();
    Ok((ProbMap { spec: image.spec, values: mean }, ConfidenceMap { spec: image.spec, sigma }))
}

/// Central finite differences against the analytic gradient on `samples`
/// randomly chosen parameters, dropout off. Returns the largest relative
/// error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<T: Real>(
    net: &Network<T>,
    image: &BevImage,
    target: &FovMask,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    use rand::seq::index::sample;
    let input = normalize_counts::<T>(image);
    let target = mask_target::<T>(target);
    let (_, analytic) = net.loss_and_gradient(&input, &target, None)?;
    let n = net.num_params();
    let picks = sample(&mut seed::rng(seed, &[seed::tag("grad-check")]), n, samples.min(n));
    let h = T::of(1e-5);
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in picks {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = bce(&probe.run(&input, None).prob, &target)?;
        probe.params[i] = orig - h;
        let down = bce(&probe.run(&input, None).prob, &target)?;
        probe.params[i] = orig;
        let numeric = ((up - down) / (h + h)).f64();
        let a = analytic[i].f64();
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
