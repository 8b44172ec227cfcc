//! Layer kernels: strided "same"-padded 1-D convolutions (full, depthwise,
//! pointwise), dense, ReLU, global average pooling, dropout, softmax, and
//! cross-entropy — each with its analytic backward pass.
//!
//! Inner loops are arranged as contiguous axpy/dot sweeps over output
//! positions so the compiler can vectorize them; strided taps are handled by
//! decomposing the padded input into stride phases. Reduction order is fixed,
//! so results are bit-reproducible for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub(crate) const PROB_FLOOR: f64 = 1e-12;

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi = *yi + a * *xi;
    }
}

/// Deterministic eight-lane dot product; lane layout is fixed so the result
/// does not depend on call site or thread count.
#[inline]
fn dot8<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let head = n / 8 * 8;
    let mut lanes = [T::zero(); 8];
    for (ca, cb) in a[..head].chunks_exact(8).zip(b[..head].chunks_exact(8)) {
        for l in 0..8 {
            lanes[l] = lanes[l] + ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in a[head..n].iter().zip(b[head..n].iter()) {
        tail = tail + *x * *y;
    }
    let s0 = (lanes[0] + lanes[4]) + (lanes[2] + lanes[6]);
    let s1 = (lanes[1] + lanes[5]) + (lanes[3] + lanes[7]);
    (s0 + s1) + tail
}

#[inline]
fn sum8<T: Scalar>(a: &[T]) -> T {
    let n = a.len();
    let head = n / 8 * 8;
    let mut lanes = [T::zero(); 8];
    for ca in a[..head].chunks_exact(8) {
        for l in 0..8 {
            lanes[l] = lanes[l] + ca[l];
        }
    }
    let mut tail = T::zero();
    for x in &a[head..n] {
        tail = tail + *x;
    }
    let s0 = (lanes[0] + lanes[4]) + (lanes[2] + lanes[6]);
    let s1 = (lanes[1] + lanes[5]) + (lanes[3] + lanes[7]);
    (s0 + s1) + tail
}

/// Geometry of one "same"-padded strided convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub ci: usize,
    pub co: usize,
    pub k: usize,
    pub s: usize,
    pub li: usize,
    pub lo: usize,
    pad_left: usize,
    padded_len: usize,
    phase_len: usize,
}

impl ConvShape {
    pub fn same(ci: usize, li: usize, co: usize, k: usize, s: usize) -> Self {
        assert!(ci > 0 && co > 0 && k > 0 && s > 0 && li > 0);
        let lo = li.div_ceil(s);
        let needed = (lo - 1) * s + k;
        let pad_total = needed.saturating_sub(li);
        let pad_left = pad_total / 2;
        let padded_len = needed.max(pad_left + li);
        let phase_len = padded_len / s + 2;
        Self { ci, co, k, s, li, lo, pad_left, padded_len, phase_len }
    }

    /// Scatter each channel of `x` into `s` zero-padded stride phases, so
    /// every tap access `j*s + t` becomes the contiguous range
    /// `phase[t % s][t/s .. t/s + lo]`.
    fn phases<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut rows = vec![T::zero(); self.ci * self.s * self.phase_len];
        for i in 0..self.ci {
            let xi = &x[i * self.li..(i + 1) * self.li];
            let base = i * self.s;
            for (m, &v) in xi.iter().enumerate() {
                let idx = self.pad_left + m;
                rows[(base + idx % self.s) * self.phase_len + idx / self.s] = v;
            }
        }
        rows
    }

    #[inline]
    fn phase_row<'a, T>(&self, rows: &'a [T], channel: usize, tap: usize) -> &'a [T] {
        let row = channel * self.s + tap % self.s;
        let start = row * self.phase_len + tap / self.s;
        &rows[start..start + self.lo]
    }
}

/// Full convolution: `x[ci, li]`, `w[co, ci, k]`, `b[co]` -> `y[co, lo]`.
pub(crate) fn conv_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], sh: &ConvShape) -> Vec<T> {
    let rows = sh.phases(x);
    let mut y = vec![T::zero(); sh.co * sh.lo];
    for o in 0..sh.co {
        let yo = &mut y[o * sh.lo..(o + 1) * sh.lo];
        yo.fill(b[o]);
        for i in 0..sh.ci {
            for t in 0..sh.k {
                let coef = w[(o * sh.ci + i) * sh.k + t];
                axpy(yo, coef, sh.phase_row(&rows, i, t));
            }
        }
    }
    y
}

/// Backward of [`conv_forward`]: returns `(dx, dw, db)`.
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    sh: &ConvShape,
    want_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = sh.phases(x);
    let mut dw = vec![T::zero(); sh.co * sh.ci * sh.k];
    let mut db = vec![T::zero(); sh.co];
    let mut drows = vec![T::zero(); sh.ci * sh.s * sh.phase_len];
    for o in 0..sh.co {
        let dyo = &dy[o * sh.lo..(o + 1) * sh.lo];
        db[o] = sum8(dyo);
        for i in 0..sh.ci {
            for t in 0..sh.k {
                let widx = (o * sh.ci + i) * sh.k + t;
                dw[widx] = dw[widx] + dot8(dyo, sh.phase_row(&rows, i, t));
                if want_dx {
                    let row = i * sh.s + t % sh.s;
                    let start = row * sh.phase_len + t / sh.s;
                    axpy(&mut drows[start..start + sh.lo], w[widx], dyo);
                }
            }
        }
    }
    let mut dx = vec![T::zero(); sh.ci * sh.li];
    if want_dx {
        for i in 0..sh.ci {
            for m in 0..sh.li {
                let idx = sh.pad_left + m;
                dx[i * sh.li + m] =
                    drows[(i * sh.s + idx % sh.s) * sh.phase_len + idx / sh.s];
            }
        }
    }
    (dx, dw, db)
}

/// Depthwise convolution: `x[c, li]`, `w[c, k]`, `b[c]` -> `y[c, lo]`.
pub(crate) fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], sh: &ConvShape) -> Vec<T> {
    debug_assert_eq!(sh.ci, sh.co);
    let rows = sh.phases(x);
    let mut y = vec![T::zero(); sh.ci * sh.lo];
    for c in 0..sh.ci {
        let yc = &mut y[c * sh.lo..(c + 1) * sh.lo];
        yc.fill(b[c]);
        for t in 0..sh.k {
            axpy(yc, w[c * sh.k + t], sh.phase_row(&rows, c, t));
        }
    }
    y
}

pub(crate) fn depthwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    sh: &ConvShape,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = sh.phases(x);
    let mut dw = vec![T::zero(); sh.ci * sh.k];
    let mut db = vec![T::zero(); sh.ci];
    let mut drows = vec![T::zero(); sh.ci * sh.s * sh.phase_len];
    for c in 0..sh.ci {
        let dyc = &dy[c * sh.lo..(c + 1) * sh.lo];
        db[c] = sum8(dyc);
        for t in 0..sh.k {
            dw[c * sh.k + t] = dot8(dyc, sh.phase_row(&rows, c, t));
            let row = c * sh.s + t % sh.s;
            let start = row * sh.phase_len + t / sh.s;
            axpy(&mut drows[start..start + sh.lo], w[c * sh.k + t], dyc);
        }
    }
    let mut dx = vec![T::zero(); sh.ci * sh.li];
    for c in 0..sh.ci {
        for m in 0..sh.li {
            let idx = sh.pad_left + m;
            dx[c * sh.li + m] = drows[(c * sh.s + idx % sh.s) * sh.phase_len + idx / sh.s];
        }
    }
    (dx, dw, db)
}

/// Pointwise (1x1) channel mixing: `x[ci, l]`, `w[co, ci]`, `b[co]` -> `y[co, l]`.
pub(crate) fn pointwise_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    ci: usize,
    co: usize,
    l: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); co * l];
    for o in 0..co {
        let yo = &mut y[o * l..(o + 1) * l];
        yo.fill(b[o]);
        for i in 0..ci {
            axpy(yo, w[o * ci + i], &x[i * l..(i + 1) * l]);
        }
    }
    y
}

pub(crate) fn pointwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    ci: usize,
    co: usize,
    l: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); ci * l];
    let mut dw = vec![T::zero(); co * ci];
    let mut db = vec![T::zero(); co];
    for o in 0..co {
        let dyo = &dy[o * l..(o + 1) * l];
        db[o] = sum8(dyo);
        for i in 0..ci {
            dw[o * ci + i] = dot8(dyo, &x[i * l..(i + 1) * l]);
            axpy(&mut dx[i * l..(i + 1) * l], w[o * ci + i], dyo);
        }
    }
    (dx, dw, db)
}

/// Dense layer: `w[out, in]`, `y = w x + b`.
pub(crate) fn dense_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], n_in: usize, n_out: usize) -> Vec<T> {
    (0..n_out)
        .map(|o| b[o] + dot8(&w[o * n_in..(o + 1) * n_in], x))
        .collect()
}

pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n_in: usize,
    n_out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); n_in];
    let mut dw = vec![T::zero(); n_out * n_in];
    for o in 0..n_out {
        axpy(&mut dw[o * n_in..(o + 1) * n_in], dy[o], x);
        axpy(&mut dx, dy[o], &w[o * n_in..(o + 1) * n_in]);
    }
    (dx, dw, dy.to_vec())
}

pub(crate) fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// `pre` is the pre-activation that produced the forward output.
pub(crate) fn relu_backward<T: Scalar>(pre: &[T], dy: &[T]) -> Vec<T> {
    pre.iter()
        .zip(dy.iter())
        .map(|(&p, &d)| if p > T::zero() { d } else { T::zero() })
        .collect()
}

/// Global average pooling over the sequence axis: `x[c, l]` -> `y[c]`.
pub(crate) fn global_avg_pool<T: Scalar>(x: &[T], c: usize, l: usize) -> Vec<T> {
    let inv = T::one() / T::from_f64(l as f64);
    (0..c).map(|ch| sum8(&x[ch * l..(ch + 1) * l]) * inv).collect()
}

pub(crate) fn global_avg_pool_backward<T: Scalar>(dy: &[T], c: usize, l: usize) -> Vec<T> {
    let inv = T::one() / T::from_f64(l as f64);
    let mut dx = vec![T::zero(); c * l];
    for ch in 0..c {
        dx[ch * l..(ch + 1) * l].fill(dy[ch] * inv);
    }
    dx
}

/// Inverted-dropout multipliers: each entry is `0` or `1/keep`, drawn from a
/// dedicated stream so backward can reuse the identical mask.
pub(crate) fn dropout_mask<T: Scalar>(n: usize, rate: f64, seed: u64) -> Vec<T> {
    debug_assert!((0.0..1.0).contains(&rate));
    let keep = 1.0 - rate;
    let inv = T::from_f64(1.0 / keep);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| if rng.gen::<f64>() < keep { inv } else { T::zero() })
        .collect()
}

pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total = sum8(&exps);
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log(probs[label])` with the probability floored at 1e-12.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> T {
    let p = probs[label].max(T::from_f64(PROB_FLOOR));
    -p.ln()
}

/// Gradient of the cross-entropy w.r.t. pre-softmax logits: `probs - onehot`.
pub fn cross_entropy_logit_grad<T: Scalar>(probs: &[T], label: usize) -> Vec<T> {
    let mut g: Vec<T> = probs.to_vec();
    g[label] = g[label] - T::one();
    g
}

// ---------------------------------------------------------------------------
// Checked public wrappers over the raw kernels.
// ---------------------------------------------------------------------------

/// Strided 1-D cross-correlation with zero "same" padding.
///
/// `x[ci, li]`, `w[co, ci, k]`, `b[co]` -> `[co, ceil(li/stride)]`. Linear:
/// the network applies its ReLU separately, after this op.
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (xd, wd, bd) = (x.dims(), w.dims(), b.dims());
    if xd.len() != 2 || wd.len() != 3 || bd.len() != 1 || xd[0] != wd[1] || bd[0] != wd[0] {
        return Err(Error::Shape(format!(
            "conv1d expects x[ci,li], w[co,ci,k], b[co]; got {xd:?}, {wd:?}, {bd:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    let sh = ConvShape::same(xd[0], xd[1], wd[0], wd[2], stride);
    Tensor::from_vec(&[sh.co, sh.lo], conv_forward(x.data(), w.data(), b.data(), &sh))
}

/// Depthwise stage (stride applied here) followed by pointwise channel
/// mixing. Linear, like [`conv1d`].
pub fn depthwise_separable<T: Scalar>(
    x: &Tensor<T>,
    dw_w: &Tensor<T>,
    dw_b: &Tensor<T>,
    pw_w: &Tensor<T>,
    pw_b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let xd = x.dims();
    if xd.len() != 2
        || dw_w.dims().len() != 2
        || dw_w.dims()[0] != xd[0]
        || dw_b.dims() != [xd[0]]
        || pw_w.dims().len() != 2
        || pw_w.dims()[1] != xd[0]
        || pw_b.dims() != [pw_w.dims()[0]]
    {
        return Err(Error::Shape(format!(
            "depthwise_separable shape mismatch: x{:?} dw{:?} pw{:?}",
            xd,
            dw_w.dims(),
            pw_w.dims()
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    let (ci, li) = (xd[0], xd[1]);
    let co = pw_w.dims()[0];
    let sh = ConvShape::same(ci, li, ci, dw_w.dims()[1], stride);
    let mid = depthwise_forward(x.data(), dw_w.data(), dw_b.data(), &sh);
    let out = pointwise_forward(&mid, pw_w.data(), pw_b.data(), ci, co, sh.lo);
    Tensor::from_vec(&[co, sh.lo], out)
}
