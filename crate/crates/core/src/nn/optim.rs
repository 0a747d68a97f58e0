//! He initialization, Adam with AMSGrad, learning-rate schedules.

use rand::Rng;
use rand_distr::StandardNormal;

use super::network::Params;
use super::Real;
use crate::error::{Error, Result};
use crate::rng;

/// `len` draws from `N(0, 2/fan_in)`.
pub fn he_init(len: usize, fan_in: usize, seed: u64) -> Result<Vec<f64>> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("fan_in must be positive".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let mut r = rng::rng(seed);
    Ok((0..len).map(|_| std * r.sample::<f64, _>(StandardNormal)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Also divide the second moment by `1 - β₂ᵗ`. Off by default: only the
    /// first moment is bias-corrected and the running maximum is used raw.
    pub correct_second_moment: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, correct_second_moment: false }
    }
}

/// Per-parameter moments, flattened in [`Params::slices`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; n_params], v: vec![0.0; n_params], v_max: vec![0.0; n_params], t: 0 }
    }

    pub fn for_params<T: Real>(params: &Params<T>, config: AdamConfig) -> Self {
        Self::new(params.param_count(), config)
    }

    /// One update of flat parameter and gradient slices.
    pub fn step_slice<T: Real>(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.update(params.iter_mut().zip(grads.iter().copied()), lr, |_| 0)
    }

    fn update<'a, T: Real + 'a>(
        &mut self,
        pairs: impl Iterator<Item = (&'a mut T, T)>,
        lr: f64,
        layer_of: impl Fn(usize) -> usize,
    ) -> Result<()> {
        let AdamConfig { beta1, beta2, eps, correct_second_moment } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = if correct_second_moment { 1.0 - beta2.powi(self.t as i32) } else { 1.0 };
        // validate before touching anything
        let pairs: Vec<(&mut T, T)> = pairs.collect();
        if let Some(i) = pairs.iter().position(|(_, g)| !g.is_finite()) {
            self.t -= 1;
            return Err(Error::NonFiniteGradient { layer: layer_of(i) });
        }
        for (i, (p, g)) in pairs.into_iter().enumerate() {
            let g = g.f64();
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            self.v_max[i] = self.v_max[i].max(self.v[i]);
            let m_hat = self.m[i] / c1;
            let step = lr * m_hat / ((self.v_max[i] / c2).sqrt() + eps);
            *p = T::of(p.f64() - step);
        }
        Ok(())
    }

    /// One update of a whole network.
    pub fn step<T: Real>(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64) -> Result<()> {
        if params.param_count() != self.m.len() || grads.param_count() != self.m.len() {
            return Err(Error::ShapeMismatch("optimizer state does not match the network".into()));
        }
        let mut bounds = Vec::new();
        let mut acc = 0;
        for l in &params.layers {
            acc += l.param_count();
            bounds.push(acc);
        }
        let pairs = params.slices_mut().flat_map(|s| s.iter_mut()).zip(grads.slices().flat_map(|s| s.iter().copied()));
        self.update(pairs, lr, |i| bounds.partition_point(|&b| b <= i))
    }
}

/// Convenience wrapper over [`AdamState::step_slice`].
pub fn adam_amsgrad_step<T: Real>(state: &mut AdamState, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
    state.step_slice(params, grads, lr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` at epoch `first`, then every `every` epochs.
    Step { first: usize, every: usize, factor: f64 },
}

impl LrSchedule {
    pub fn vdsr() -> Self {
        LrSchedule::Step { first: 150, every: 50, factor: 0.1 }
    }

    pub fn irunet() -> Self {
        LrSchedule::Step { first: 100, every: 100, factor: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Constant => Ok(()),
            LrSchedule::Step { every, factor, .. } => {
                if every == 0 || !(factor > 0.0 && factor <= 1.0) {
                    Err(Error::Config(format!("schedule every={every} factor={factor} is invalid")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Learning rate for a zero-based epoch.
pub fn lr_schedule(base: f64, schedule: &LrSchedule, epoch: usize) -> f64 {
    match *schedule {
        LrSchedule::Constant => base,
        LrSchedule::Step { first, every, factor } => {
            if epoch < first {
                return base;
            }
            let drops = 1 + (epoch - first) / every;
            let mut lr = base;
            for _ in 0..drops {
                lr *= factor;
            }
            lr
        }
    }
}
