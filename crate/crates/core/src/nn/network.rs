//! Network topologies and the per-sample forward/backward passes.

use std::fmt;
use std::str::FromStr;

use super::layers::{
    conv_backward_sample, conv_forward_sample, pool_backward_sample, pool_sample, relu_backward_inplace, relu_inplace,
    upsample_backward_sample, upsample_sample,
};
pub use super::layers::ConvLayer;
use super::optim::he_init;
use super::tensor::Tensor4;
use super::Real;
use crate::error::{Error, Result};
use crate::metrics::{combined_loss_gradient_plane, combined_loss_plane, LossSpec, Plane};
use crate::noise::reflect_index;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Plain chain of convolutions.
    Vdsr,
    /// Two-level encoder/decoder with additive skips.
    IrUnet,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Vdsr => "vdsr",
            Topology::IrUnet => "irunet",
        })
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vdsr" => Ok(Topology::Vdsr),
            "irunet" => Ok(Topology::IrUnet),
            _ => Err(Error::Config(format!("unknown architecture {s:?} (expected vdsr or irunet)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub topology: Topology,
    pub depth: usize,
    pub filters: usize,
    pub kernel: usize,
}

/// One step of the forward program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Conv { layer: usize, relu: bool },
    Pool,
    Up,
    Save(usize),
    AddSkip(usize),
}

impl NetworkSpec {
    pub fn vdsr() -> Self {
        Self { topology: Topology::Vdsr, depth: 20, filters: 64, kernel: 3 }
    }

    pub fn irunet() -> Self {
        Self { topology: Topology::IrUnet, depth: 20, filters: 64, kernel: 3 }
    }

    pub fn for_topology(topology: Topology) -> Self {
        match topology {
            Topology::Vdsr => Self::vdsr(),
            Topology::IrUnet => Self::irunet(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth {} must be at least 2", self.depth)));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.filters == 0 {
            return Err(Error::Config("filters must be positive".into()));
        }
        if self.topology == Topology::IrUnet && self.depth % 5 != 0 {
            return Err(Error::Config(format!(
                "irunet depth {} must split evenly over its five conv blocks",
                self.depth
            )));
        }
        Ok(())
    }

    /// `(cin, cout)` of every conv layer in order.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        let f = self.filters;
        (0..self.depth)
            .map(|i| {
                let cin = if i == 0 { 1 } else { f };
                let cout = if i + 1 == self.depth { 1 } else { f };
                (cin, cout)
            })
            .collect()
    }

    pub fn ops(&self) -> Vec<Op> {
        let last = self.depth - 1;
        let conv = |layer: usize| Op::Conv { layer, relu: layer != last };
        match self.topology {
            Topology::Vdsr => (0..self.depth).map(conv).collect(),
            Topology::IrUnet => {
                let per = self.depth / 5;
                let mut ops = Vec::new();
                let mut l = 0;
                let mut block = |ops: &mut Vec<Op>| {
                    for _ in 0..per {
                        ops.push(conv(l));
                        l += 1;
                    }
                };
                block(&mut ops);
                ops.push(Op::Save(0));
                ops.push(Op::Pool);
                block(&mut ops);
                ops.push(Op::Save(1));
                ops.push(Op::Pool);
                block(&mut ops);
                ops.push(Op::Up);
                ops.push(Op::AddSkip(1));
                block(&mut ops);
                ops.push(Op::Up);
                ops.push(Op::AddSkip(0));
                block(&mut ops);
                ops
            }
        }
    }

    /// Spatial sizes must be multiples of this; inputs are padded up to it.
    pub fn size_multiple(&self) -> usize {
        match self.topology {
            Topology::Vdsr => 1,
            Topology::IrUnet => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = spec.layer_channels().into_iter().map(|(ci, co)| ConvLayer::zeros(ci, co, spec.kernel)).collect();
        Self { layers }
    }

    /// He-initialized weights, zero biases.
    pub fn he(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut p = Self::zeros(spec);
        for (i, l) in p.layers.iter_mut().enumerate() {
            let fan_in = l.fan_in();
            l.weights = he_init(l.weights.len(), fan_in, derive_seed(seed, i as u64))?.into_iter().map(T::of).collect();
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| ConvLayer::zeros(l.cin, l.cout, l.k)).collect() }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    cin: l.cin,
                    cout: l.cout,
                    k: l.k,
                    weights: l.weights.iter().map(|v| U::of(v.f64())).collect(),
                    bias: l.bias.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    /// Visits every parameter slice in a fixed order (weights then bias per layer).
    pub fn slices(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.layers.len() == spec.depth
            && self
                .layers
                .iter()
                .zip(spec.layer_channels())
                .all(|(l, (ci, co))| l.cin == ci && l.cout == co && l.k == spec.kernel)
    }
}

struct Step<T> {
    input: Vec<T>,
    /// post-activation output, kept for ReLU layers only
    output: Vec<T>,
    c: usize,
    h: usize,
    w: usize,
}

/// Activations kept for the backward pass.
pub struct Trace<T> {
    steps: Vec<Step<T>>,
}

/// Residual branch only: returns `r` with `output = input + r`.
fn run<T: Real>(spec: &NetworkSpec, params: &Params<T>, x: &[T], h: usize, w: usize, keep: bool) -> Result<(Vec<T>, Option<Trace<T>>)> {
    let ops = spec.ops();
    let mut cur = x.to_vec();
    let (mut c, mut ch, mut cw) = (1usize, h, w);
    let mut skips: [Vec<T>; 2] = [Vec::new(), Vec::new()];
    let mut steps = Vec::with_capacity(if keep { ops.len() } else { 0 });
    for op in ops {
        let next = match op {
            Op::Conv { layer, relu } => {
                let l = &params.layers[layer];
                let mut out = vec![T::zero(); l.cout * ch * cw];
                conv_forward_sample(l, &cur, ch, cw, &mut out);
                if relu {
                    relu_inplace(&mut out);
                }
                if !out.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteActivation { layer });
                }
                if keep {
                    let output = if relu { out.clone() } else { Vec::new() };
                    steps.push(Step { input: std::mem::take(&mut cur), output, c, h: ch, w: cw });
                }
                let next = (out, l.cout, ch, cw);
                next
            }
            Op::Pool => {
                let out = pool_sample(&cur, c, ch, cw);
                if keep {
                    steps.push(Step { input: Vec::new(), output: Vec::new(), c, h: ch, w: cw });
                }
                (out, c, ch / 2, cw / 2)
            }
            Op::Up => {
                let out = upsample_sample(&cur, c, ch, cw);
                if keep {
                    steps.push(Step { input: Vec::new(), output: Vec::new(), c, h: ch, w: cw });
                }
                (out, c, ch * 2, cw * 2)
            }
            Op::Save(slot) => {
                skips[slot] = cur.clone();
                if keep {
                    steps.push(Step { input: Vec::new(), output: Vec::new(), c, h: ch, w: cw });
                }
                (cur, c, ch, cw)
            }
            Op::AddSkip(slot) => {
                let s = &skips[slot];
                if s.len() != cur.len() {
                    return Err(Error::ShapeMismatch(format!("skip {slot}: {} vs {} values", s.len(), cur.len())));
                }
                cur.iter_mut().zip(s).for_each(|(a, b)| *a += *b);
                if keep {
                    steps.push(Step { input: Vec::new(), output: Vec::new(), c, h: ch, w: cw });
                }
                (cur, c, ch, cw)
            }
        };
        (cur, c, ch, cw) = next;
    }
    debug_assert_eq!((c, ch, cw), (1, h, w));
    let trace = keep.then_some(Trace { steps });
    Ok((cur, trace))
}

/// Gradients of the residual branch given `g = ∂L/∂r`.
fn backprop<T: Real>(spec: &NetworkSpec, params: &Params<T>, trace: Trace<T>, g: Vec<T>) -> Result<Params<T>> {
    let ops = spec.ops();
    let mut grads = params.zeros_like();
    let mut skip_grads: [Vec<T>; 2] = [Vec::new(), Vec::new()];
    let mut g = g;
    for (i, op) in ops.iter().enumerate().rev() {
        let st = &trace.steps[i];
        match *op {
            Op::Conv { layer, relu } => {
                if relu {
                    relu_backward_inplace(&mut g, &st.output);
                }
                let l = &params.layers[layer];
                let gl = &mut grads.layers[layer];
                let need_input = i > 0;
                let mut gi = if need_input { vec![T::zero(); l.cin * st.h * st.w] } else { Vec::new() };
                conv_backward_sample(
                    l,
                    &st.input,
                    &g,
                    st.h,
                    st.w,
                    &mut gl.weights,
                    &mut gl.bias,
                    need_input.then_some(gi.as_mut_slice()),
                );
                if gl.weights.iter().chain(&gl.bias).any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient { layer });
                }
                g = gi;
            }
            Op::Pool => g = pool_backward_sample(&g, st.c, st.h, st.w),
            Op::Up => g = upsample_backward_sample(&g, st.c, st.h, st.w),
            Op::AddSkip(slot) => skip_grads[slot] = g.clone(),
            Op::Save(slot) => g.iter_mut().zip(&skip_grads[slot]).for_each(|(a, b)| *a += *b),
        }
    }
    Ok(grads)
}

fn pad_reflect<T: Real>(x: &[T], h: usize, w: usize, hp: usize, wp: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(hp * wp);
    for y in 0..hp {
        let sy = reflect_index(y as isize, h);
        for xx in 0..wp {
            out.push(x[sy * w + reflect_index(xx as isize, w)]);
        }
    }
    out
}

fn crop<T: Real>(x: &[T], wp: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend_from_slice(&x[y * wp..y * wp + w]);
    }
    out
}

fn padded_size(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Forward pass on one single-channel sample; `output = input + residual`.
pub fn forward_sample<T: Real>(spec: &NetworkSpec, params: &Params<T>, x: &[T], h: usize, w: usize) -> Result<Vec<T>> {
    let m = spec.size_multiple();
    let (hp, wp) = (padded_size(h, m), padded_size(w, m));
    let xp = if (hp, wp) == (h, w) { x.to_vec() } else { pad_reflect(x, h, w, hp, wp) };
    let (r, _) = run(spec, params, &xp, hp, wp, false)?;
    let out: Vec<T> = xp.iter().zip(&r).map(|(a, b)| *a + *b).collect();
    Ok(if (hp, wp) == (h, w) { out } else { crop(&out, wp, h, w) })
}

/// Combined loss of one sample and the parameter gradient.
pub fn loss_and_grad<T: Real>(
    spec: &NetworkSpec,
    params: &Params<T>,
    x: &[T],
    target: &Plane,
    loss: &LossSpec,
) -> Result<(f64, Params<T>)> {
    let (h, w) = (target.height, target.width);
    let m = spec.size_multiple();
    let (hp, wp) = (padded_size(h, m), padded_size(w, m));
    let xp = if (hp, wp) == (h, w) { x.to_vec() } else { pad_reflect(x, h, w, hp, wp) };
    let (r, trace) = run(spec, params, &xp, hp, wp, true)?;
    let out: Vec<T> = xp.iter().zip(&r).map(|(a, b)| *a + *b).collect();
    let out = if (hp, wp) == (h, w) { out } else { crop(&out, wp, h, w) };
    let plane = Plane::new(h, w, out.iter().map(|v| v.f64()).collect());
    let (l, g) = combined_loss_gradient_plane(&plane, target, loss)?;
    let mut gp = vec![T::zero(); hp * wp];
    for y in 0..h {
        for xx in 0..w {
            gp[y * wp + xx] = T::of(g.data[y * w + xx]);
        }
    }
    let grads = backprop(spec, params, trace.expect("trace kept"), gp)?;
    Ok((l, grads))
}

pub fn sample_loss<T: Real>(spec: &NetworkSpec, params: &Params<T>, x: &[T], target: &Plane, loss: &LossSpec) -> Result<f64> {
    let out = forward_sample(spec, params, x, target.height, target.width)?;
    combined_loss_plane(&Plane::new(target.height, target.width, out.iter().map(|v| v.f64()).collect()), target, loss)
}

/// Batched forward on a `N × 1 × H × W` tensor; no clamping.
pub fn network_forward<T: Real>(spec: &NetworkSpec, params: &Params<T>, input: &Tensor4<T>) -> Result<Tensor4<T>> {
    if input.c != 1 {
        return Err(Error::ShapeMismatch(format!("network input has {} channels, expected 1", input.c)));
    }
    if !params.matches(spec) {
        return Err(Error::ShapeMismatch("parameters do not match the network spec".into()));
    }
    let mut out = Tensor4::zeros(input.n, 1, input.h, input.w);
    for i in 0..input.n {
        let y = forward_sample(spec, params, input.sample(i), input.h, input.w)?;
        out.sample_mut(i).copy_from_slice(&y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
        let mut r = rng::rng(seed);
        (0..n).map(|_| r.random_range(lo..hi)).collect()
    }

    fn tiny(topology: Topology) -> NetworkSpec {
        let depth = if topology == Topology::Vdsr { 3 } else { 5 };
        NetworkSpec { topology, depth, filters: 3, kernel: 3 }
    }

    #[test]
    fn zero_parameters_are_identity() {
        for spec in [NetworkSpec::vdsr(), tiny(Topology::IrUnet), tiny(Topology::Vdsr)] {
            let p = Params::<f64>::zeros(&spec);
            for (h, w) in [(8, 8), (7, 9), (1, 3)] {
                let x = random_vec(h * w, 3, 0.0, 1.0);
                assert_eq!(forward_sample(&spec, &p, &x, h, w).unwrap(), x);
            }
        }
    }

    #[test]
    fn irunet_preserves_shape() {
        let spec = NetworkSpec { filters: 4, ..NetworkSpec::irunet() };
        let p = Params::<f32>::he(&spec, 1).unwrap();
        let x = Tensor4::from_vec(1, 1, 64, 64, vec![0.5f32; 4096]).unwrap();
        assert_eq!(network_forward(&spec, &p, &x).unwrap().dims(), (1, 1, 64, 64));
        assert_eq!(spec.ops().iter().filter(|o| matches!(o, Op::Conv { .. })).count(), 20);
    }

    #[test]
    fn irunet_depth_must_split_over_blocks() {
        assert!(NetworkSpec { depth: 12, ..NetworkSpec::irunet() }.validate().is_err());
        assert!(NetworkSpec { depth: 1, ..NetworkSpec::vdsr() }.validate().is_err());
        assert!(NetworkSpec { kernel: 4, ..NetworkSpec::vdsr() }.validate().is_err());
    }

    fn fd_params(spec: &NetworkSpec, h: usize, w: usize, seed: u64) {
        let mut p = Params::<f64>::he(spec, seed).unwrap();
        for l in &mut p.layers {
            l.bias = random_vec(l.bias.len(), seed + 7, -0.1, 0.1);
        }
        let x = random_vec(h * w, seed + 1, 0.0, 1.0);
        let y = Plane::new(h, w, random_vec(h * w, seed + 2, 0.0, 1.0));
        let loss = LossSpec::default();
        let (_, g) = loss_and_grad(spec, &p, &x, &y, &loss).unwrap();
        let gmax = g.slices().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let hstep = 1e-6;
        let mut worst = 0.0f64;
        for li in 0..p.layers.len() {
            for which in 0..2 {
                let n = if which == 0 { p.layers[li].weights.len() } else { p.layers[li].bias.len() };
                for j in 0..n {
                    let nudge = |d: f64| {
                        let mut q = p.clone();
                        let l = &mut q.layers[li];
                        if which == 0 { l.weights[j] += d } else { l.bias[j] += d }
                        q
                    };
                    let (a, b) = (nudge(hstep), nudge(-hstep));
                    let num = (sample_loss(spec, &a, &x, &y, &loss).unwrap() - sample_loss(spec, &b, &x, &y, &loss).unwrap())
                        / (2.0 * hstep);
                    let an = if which == 0 { g.layers[li].weights[j] } else { g.layers[li].bias[j] };
                    let err = (an - num).abs() / an.abs().max(num.abs()).max(1e-3 * gmax);
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst < 1e-4, "{spec:?} {h}x{w}: worst rel err {worst}");
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        fd_params(&tiny(Topology::Vdsr), 6, 5, 1);
        fd_params(&tiny(Topology::IrUnet), 8, 8, 2);
        // padded path
        fd_params(&tiny(Topology::IrUnet), 6, 7, 3);
    }

    #[test]
    fn overfits_one_pair() {
        use crate::nn::optim::{AdamConfig, AdamState};
        let spec = NetworkSpec { topology: Topology::Vdsr, depth: 3, filters: 8, kernel: 3 };
        let (h, w) = (16, 16);
        let clean: Vec<f64> = (0..h * w).map(|i| (((i / w) as f64 - 7.5).powi(2) / 20.0).exp().recip()).collect();
        let noisy: Vec<f64> = clean.iter().zip(random_vec(h * w, 5, -0.2, 0.2)).map(|(a, b)| a + b).collect();
        let target = Plane::new(h, w, clean);
        let loss = LossSpec::default();
        let mut p = Params::<f64>::he(&spec, 4).unwrap();
        let mut adam = AdamState::for_params(&p, AdamConfig::default());
        let initial = sample_loss(&spec, &p, &noisy, &target, &loss).unwrap();
        for _ in 0..500 {
            let (_, g) = loss_and_grad(&spec, &p, &noisy, &target, &loss).unwrap();
            adam.step(&mut p, &g, 1e-3).unwrap();
        }
        let fin = sample_loss(&spec, &p, &noisy, &target, &loss).unwrap();
        assert!(fin < 0.05 * initial, "initial {initial} final {fin}");
    }
}
