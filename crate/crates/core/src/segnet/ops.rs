//! Single-sample tensor kernels in channel-major (CHW) layout.

use rand::Rng as _;

use crate::real::Real;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![T::zero(); c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Convolution geometry: `c_out x c_in x kernel x kernel` weights followed by
/// `c_out` biases, both inside the network's flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.c_out
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

/// Unrolls `x` into a `(c * k * k) x (h * w)` matrix for a same-padded
/// odd kernel.
fn im2col<T: Real>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    if k == 1 {
        return x.data.clone();
    }
    let pad = (k / 2) as isize;
    let mut col = vec![T::zero(); x.c * k * k * hw];
    for ci in 0..x.c {
        let src = &x.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &src[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        dst[xx] = src_row[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates column gradients into `dx`.
fn col2im<T: Real>(col: &[T], dx: &mut Tensor<T>, k: usize) {
    let (h, w) = (dx.h, dx.w);
    let hw = h * w;
    if k == 1 {
        for (d, &g) in dx.data.iter_mut().zip(col) {
            *d += g;
        }
        return;
    }
    let pad = (k / 2) as isize;
    for ci in 0..dx.c {
        let dst = &mut dx.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let x0 = (-ddx).max(0) as usize;
                    let x1 = (w as isize - ddx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        dst_row[(xx as isize + ddx) as usize] += src[xx];
                    }
                }
            }
        }
    }
}

pub fn conv_forward<T: Real>(spec: &ConvSpec, params: &[T], x: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.c, spec.c_in);
    let hw = x.plane();
    let kk = spec.patch();
    let col = im2col(x, spec.kernel);
    let weights = &params[spec.weight_offset..][..spec.weight_len()];
    let bias = &params[spec.bias_offset..][..spec.c_out];
    let mut out = Tensor::zeros(spec.c_out, x.h, x.w);
    for (o, chunk) in out.data.chunks_mut(hw).enumerate() {
        chunk.fill(bias[o]);
    }
    T::gemm(
        spec.c_out,
        kk,
        hw,
        T::one(),
        weights,
        (kk as isize, 1),
        &col,
        (hw as isize, 1),
        T::one(),
        &mut out.data,
        (hw as isize, 1),
    );
    out
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
pub fn conv_backward<T: Real>(
    spec: &ConvSpec,
    params: &[T],
    x: &Tensor<T>,
    dy: &Tensor<T>,
    grad: &mut [T],
) -> Tensor<T> {
    let hw = x.plane();
    let kk = spec.patch();
    let col = im2col(x, spec.kernel);
    {
        let dw = &mut grad[spec.weight_offset..][..spec.weight_len()];
        T::gemm(
            spec.c_out,
            hw,
            kk,
            T::one(),
            &dy.data,
            (hw as isize, 1),
            &col,
            (1, hw as isize),
            T::one(),
            dw,
            (kk as isize, 1),
        );
    }
    {
        let db = &mut grad[spec.bias_offset..][..spec.c_out];
        for (o, chunk) in dy.data.chunks(hw).enumerate() {
            db[o] += chunk.iter().copied().sum::<T>();
        }
    }
    let weights = &params[spec.weight_offset..][..spec.weight_len()];
    let mut dcol = vec![T::zero(); kk * hw];
    T::gemm(
        kk,
        spec.c_out,
        hw,
        T::one(),
        weights,
        (1, kk as isize),
        &dy.data,
        (hw as isize, 1),
        T::zero(),
        &mut dcol,
        (hw as isize, 1),
    );
    #[cfg(test)]
    corrupt::apply(&mut dcol);
    let mut dx = Tensor::zeros(x.c, x.h, x.w);
    col2im(&dcol, &mut dx, spec.kernel);
    dx
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient through a ReLU whose output was `y`.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling; also returns the flat source index of every maximum.
pub fn maxpool<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    let mut arg = vec![0u32; x.c * h2 * w2];
    for c in 0..x.c {
        let base = c * x.plane();
        for y in 0..h2 {
            for xx in 0..w2 {
                let mut best = base + 2 * y * x.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * x.w + 2 * xx + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                let o = (c * h2 + y) * w2 + xx;
                out.data[o] = x.data[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Real>(arg: &[u32], dy: &Tensor<T>, c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(c, h, w);
    for (&i, &g) in arg.iter().zip(&dy.data) {
        dx.data[i as usize] += g;
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        for y in 0..h2 {
            let src = &x.data[(c * x.h + y / 2) * x.w..][..x.w];
            let dst = &mut out.data[(c * h2 + y) * w2..][..w2];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

pub fn upsample_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for y in 0..dy.h {
            let src = &dy.data[(c * dy.h + y) * dy.w..][..dy.w];
            let dst = &mut dx.data[(c * h + y / 2) * w..][..w];
            for (xx, &g) in src.iter().enumerate() {
                dst[xx / 2] += g;
            }
        }
    }
    dx
}

/// Inverted dropout: returns the per-element scale (0 or `1 / (1 - p)`).
pub fn dropout_mask<T: Real>(len: usize, p: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub fn scale_inplace<T: Real>(x: &mut Tensor<T>, mask: &[T]) {
    for (v, &m) in x.data.iter_mut().zip(mask) {
        *v *= m;
    }
}

pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

pub fn split<T: Real>(x: Tensor<T>, c_first: usize) -> (Tensor<T>, Tensor<T>) {
    let at = c_first * x.plane();
    let mut first = x.data;
    let second = first.split_off(at);
    (
        Tensor::from_vec(c_first, x.h, x.w, first),
        Tensor::from_vec(x.c - c_first, x.h, x.w, second),
    )
}

/// Logistic function kept strictly inside (0, 1), also where it saturates.
pub fn sigmoid<T: Real>(z: T) -> T {
    let p = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    p.max(T::min_positive_value()).min(T::one() - T::epsilon())
}

#[cfg(test)]
pub(crate) mod corrupt {
    use std::cell::Cell;

    use crate::real::Real;

    thread_local! {
        static ACTIVE: Cell<bool> = const { Cell::new(false) };
    }

    /// Perturbs conv input gradients on this thread while `on` is set.
    pub fn set(on: bool) {
        ACTIVE.with(|a| a.set(on));
    }

    pub fn apply<T: Real>(dcol: &mut [T]) {
        if ACTIVE.with(|a| a.get()) {
            for v in dcol.iter_mut() {
                *v *= T::of(1.5);
            }
        }
    }
}
