//! Convolution, ReLU, 2×2 mean pooling and nearest-neighbour upsampling.
//!
//! The `*_sample` functions work on one `C × H × W` sample stored as a flat
//! slice; the `Tensor4` wrappers loop over the batch.

use super::tensor::Tensor4;
use super::Real;
use crate::error::{Error, Result};

/// `cout × cin × k × k` weights and `cout` biases; zero "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        Self { cin, cout, k, weights: vec![T::zero(); cout * cin * k * k], bias: vec![T::zero(); cout] }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check(&self) -> Result<()> {
        if self.k % 2 == 0 || self.weights.len() != self.cout * self.cin * self.k * self.k || self.bias.len() != self.cout {
            return Err(Error::ShapeMismatch(format!(
                "conv layer {}->{} k={} with {} weights and {} biases",
                self.cin,
                self.cout,
                self.k,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    /// Weights of the adjoint convolution: channels swapped, kernel rotated by 180°.
    fn adjoint_weights(&self) -> Vec<T> {
        let (k, kk) = (self.k, self.k * self.k);
        let mut out = vec![T::zero(); self.weights.len()];
        for co in 0..self.cout {
            for ci in 0..self.cin {
                let src = &self.weights[(co * self.cin + ci) * kk..][..kk];
                let dst = &mut out[(ci * self.cout + co) * kk..][..kk];
                for i in 0..kk {
                    dst[i] = src[(k * k - 1) - i];
                }
            }
        }
        out
    }
}

#[inline]
fn axpy<T: Real>(out: &mut [T], x: &[T], a: T) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// `out[x] += w0·r[x-1] + w1·r[x] + w2·r[x+1]` with zeros outside the row.
#[inline]
fn row3<T: Real>(out: &mut [T], r: &[T], w0: T, w1: T, w2: T) {
    let w = out.len();
    if w == 1 {
        out[0] += w1 * r[0];
        return;
    }
    out[0] += w1 * r[0] + w2 * r[1];
    out[w - 1] += w0 * r[w - 2] + w1 * r[w - 1];
    let inner = &mut out[1..w - 1];
    for (((o, &a), &b), &c) in inner.iter_mut().zip(&r[..w - 2]).zip(&r[1..w - 1]).zip(&r[2..]) {
        *o += w0 * a + w1 * b + w2 * c;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const L: usize = 16;
    let mut acc = [T::zero(); L];
    let (ca, cb) = (a.chunks_exact(L), b.chunks_exact(L));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..L {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = T::zero();
    for v in acc {
        s += v;
    }
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// Cross-correlation of one sample: `input` is `cin × h × w`, `out` is `cout × h × w`.
#[allow(clippy::too_many_arguments)]
fn correlate<T: Real>(input: &[T], cin: usize, h: usize, w: usize, weights: &[T], bias: Option<&[T]>, cout: usize, k: usize, out: &mut [T]) {
    let hw = h * w;
    let kk = k * k;
    let p = (k / 2) as isize;
    for co in 0..cout {
        let o = &mut out[co * hw..(co + 1) * hw];
        o.fill(bias.map_or(T::zero(), |b| b[co]));
        for ci in 0..cin {
            let plane = &input[ci * hw..(ci + 1) * hw];
            let wk = &weights[(co * cin + ci) * kk..][..kk];
            for y in 0..h {
                let orow = &mut o[y * w..(y + 1) * w];
                for ky in 0..k {
                    let yi = y as isize + ky as isize - p;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    let irow = &plane[yi as usize * w..(yi as usize + 1) * w];
                    if k == 3 {
                        row3(orow, irow, wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]);
                    } else {
                        for kx in 0..k {
                            let dx = kx as isize - p;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = (w as isize - dx).min(w as isize).max(x0 as isize) as usize;
                            if x1 > x0 {
                                let xs = (x0 as isize + dx) as usize;
                                axpy(&mut orow[x0..x1], &irow[xs..xs + (x1 - x0)], wk[ky * k + kx]);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_forward_sample<T: Real>(layer: &ConvLayer<T>, input: &[T], h: usize, w: usize, out: &mut [T]) {
    debug_assert_eq!(input.len(), layer.cin * h * w);
    debug_assert_eq!(out.len(), layer.cout * h * w);
    correlate(input, layer.cin, h, w, &layer.weights, Some(&layer.bias), layer.cout, layer.k, out);
}

/// Accumulates weight and bias gradients into `gw`, `gb` and, when asked,
/// writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_sample<T: Real>(
    layer: &ConvLayer<T>,
    input: &[T],
    grad_out: &[T],
    h: usize,
    w: usize,
    gw: &mut [T],
    gb: &mut [T],
    grad_in: Option<&mut [T]>,
) {
    let (cin, cout, k) = (layer.cin, layer.cout, layer.k);
    let hw = h * w;
    let kk = k * k;
    let p = (k / 2) as isize;
    for co in 0..cout {
        let g = &grad_out[co * hw..(co + 1) * hw];
        gb[co] += g.iter().copied().sum::<T>();
        for ci in 0..cin {
            let plane = &input[ci * hw..(ci + 1) * hw];
            let gk = &mut gw[(co * cin + ci) * kk..][..kk];
            for ky in 0..k {
                let dy = ky as isize - p;
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(x0 as isize) as usize;
                    if x1 <= x0 {
                        continue;
                    }
                    let xs = (x0 as isize + dx) as usize;
                    let mut s = T::zero();
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        s += dot(&g[y * w + x0..y * w + x1], &plane[yi * w + xs..yi * w + xs + (x1 - x0)]);
                    }
                    gk[ky * k + kx] += s;
                }
            }
        }
    }
    if let Some(gi) = grad_in {
        correlate(grad_out, cout, h, w, &layer.adjoint_weights(), None, cin, k, gi);
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        *v = v.max(T::zero());
    }
}

/// Gradient through ReLU given the layer's (post-activation) output.
pub fn relu_backward_inplace<T: Real>(grad: &mut [T], output: &[T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 mean pooling of a `c × h × w` sample with even `h` and `w`.
pub fn pool_sample<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut out = Vec::with_capacity(c * h2 * w2);
    for ch in 0..c {
        let p = &x[ch * h * w..];
        for y in 0..h2 {
            let (r0, r1) = (&p[2 * y * w..], &p[(2 * y + 1) * w..]);
            for xx in 0..w2 {
                out.push(q * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]));
            }
        }
    }
    out
}

pub fn pool_backward_sample<T: Real>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch * h + y) * w + x] = q * g[(ch * h2 + y / 2) * w2 + x / 2];
            }
        }
    }
    out
}

/// Nearest-neighbour ×2 upsampling of a `c × h × w` sample.
pub fn upsample_sample<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(c * 4 * h * w);
    for ch in 0..c {
        for y in 0..2 * h {
            let r = &x[(ch * h + y / 2) * w..][..w];
            for xx in 0..2 * w {
                out.push(r[xx / 2]);
            }
        }
    }
    out
}

/// Adjoint of [`upsample_sample`]; `h`, `w` are the low-resolution sizes.
pub fn upsample_backward_sample<T: Real>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..2 * w {
                out[(ch * h + y / 2) * w + x / 2] += g[(ch * 2 * h + y) * 2 * w + x];
            }
        }
    }
    out
}

fn check_input<T: Real>(input: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<()> {
    layer.check()?;
    if input.c != layer.cin {
        return Err(Error::ShapeMismatch(format!("input has {} channels, layer expects {}", input.c, layer.cin)));
    }
    Ok(())
}

pub fn conv2d_forward<T: Real>(input: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Tensor4<T>> {
    check_input(input, layer)?;
    let (n, _, h, w) = input.dims();
    let mut out = Tensor4::zeros(n, layer.cout, h, w);
    for i in 0..n {
        conv_forward_sample(layer, input.sample(i), h, w, out.sample_mut(i));
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    layer: &ConvLayer<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    check_input(input, layer)?;
    if grad_out.dims() != (input.n, layer.cout, input.h, input.w) {
        return Err(Error::ShapeMismatch(format!(
            "grad_out {:?} does not match forward output {:?}",
            grad_out.dims(),
            (input.n, layer.cout, input.h, input.w)
        )));
    }
    let (n, _, h, w) = input.dims();
    let mut gi = Tensor4::zeros(n, layer.cin, h, w);
    let mut gw = vec![T::zero(); layer.weights.len()];
    let mut gb = vec![T::zero(); layer.cout];
    for i in 0..n {
        conv_backward_sample(layer, input.sample(i), grad_out.sample(i), h, w, &mut gw, &mut gb, Some(gi.sample_mut(i)));
    }
    Ok((gi, gw, gb))
}
