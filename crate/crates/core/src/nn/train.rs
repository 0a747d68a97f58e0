//! Training loop, loss history and inference.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::network::{forward_sample, loss_and_grad, sample_loss, NetworkSpec, Params, Topology};
use super::optim::{lr_schedule, AdamConfig, AdamState, LrSchedule};
use crate::error::{Error, Result};
use crate::frame::{augment_flip, normalize_frame, Frame, FramePair};
use crate::metrics::{LossSpec, Plane};
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub flip_prob: f64,
    pub seed: u64,
    pub loss: LossSpec,
    pub adam: AdamConfig,
    /// Spread the samples of a batch over the rayon pool. Gradients are
    /// still summed in batch order, so results do not depend on it.
    pub parallel: bool,
}

impl TrainConfig {
    pub fn vdsr() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 8,
            epochs: 250,
            schedule: LrSchedule::vdsr(),
            flip_prob: 0.5,
            seed: 0,
            loss: LossSpec::default(),
            adam: AdamConfig::default(),
            parallel: true,
        }
    }

    pub fn irunet() -> Self {
        Self { batch_size: 16, epochs: 300, schedule: LrSchedule::irunet(), ..Self::vdsr() }
    }

    pub fn for_topology(t: Topology) -> Self {
        match t {
            Topology::Vdsr => Self::vdsr(),
            Topology::IrUnet => Self::irunet(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn write_history<W: std::io::Write>(rows: &[HistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "lr", "train_loss", "val_loss"])?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history<R: std::io::Read>(src: R) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_reader(src);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidFrame(format!("bad history field {i} in {rec:?}")))
        };
        rows.push(HistoryRow { epoch: num(0)? as usize, lr: num(1)?, train_loss: num(2)?, val_loss: num(3)? });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters at the lowest validation loss.
    pub best: Params<f32>,
    pub best_epoch: usize,
    pub last: Params<f32>,
    pub history: Vec<HistoryRow>,
}

/// A run that stopped early on a non-finite value. `best` is the last
/// checkpoint, if any epoch completed.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub best: Option<Params<f32>>,
    pub history: Vec<HistoryRow>,
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} epochs completed)", self.error, self.history.len())
    }
}

/// Normalizes both frames of every pair to `[0, 1]`, each with its own record.
pub fn normalize_pairs(pairs: &[FramePair]) -> Result<Vec<FramePair>> {
    pairs
        .iter()
        .map(|p| {
            let lc = normalize_frame(&p.lc).map_err(|e| tag(e, &p.pair_id))?.0;
            let hc = normalize_frame(&p.hc).map_err(|e| tag(e, &p.pair_id))?.0;
            FramePair::new(lc, hc, p.pair_id.clone())
        })
        .collect()
}

fn tag(e: Error, id: &str) -> Error {
    match e {
        Error::ConstantFrame { value, .. } => Error::ConstantFrame { id: Some(id.to_string()), value },
        e => e,
    }
}

fn input_of(f: &Frame) -> Vec<f32> {
    f.data().to_vec()
}

fn evaluate(spec: &NetworkSpec, params: &Params<f32>, pairs: &[FramePair], loss: &LossSpec, parallel: bool) -> Result<f64> {
    let one = |p: &FramePair| sample_loss(spec, params, p.lc.data(), &Plane::from_frame(&p.hc), loss);
    let losses: Vec<f64> = if parallel {
        pairs.par_iter().map(one).collect::<Result<_>>()?
    } else {
        pairs.iter().map(one).collect::<Result<_>>()?
    };
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains on already-normalized pairs. Parameters start from `init` or a
/// He initialization seeded from `config.seed`. `on_epoch` sees every
/// history row together with the current best parameters.
pub fn train_normalized(
    spec: &NetworkSpec,
    config: &TrainConfig,
    train_set: &[FramePair],
    val_set: &[FramePair],
    init: Option<Params<f32>>,
    mut on_epoch: impl FnMut(&HistoryRow, &Params<f32>),
) -> std::result::Result<TrainResult, TrainFailure> {
    let fail = |error: Error| TrainFailure { error, best: None, history: Vec::new() };
    spec.validate().map_err(fail)?;
    config.validate().map_err(fail)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(fail(Error::InvalidArgument("training needs non-empty train and val splits".into())));
    }
    let mut params = match init {
        Some(p) if p.matches(spec) => p,
        Some(_) => return Err(fail(Error::ShapeMismatch("initial parameters do not match the network".into()))),
        None => Params::he(spec, derive_seed(config.seed, 0)).map_err(fail)?,
    };
    let mut adam = AdamState::for_params(&params, config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Params<f32>)> = None;
    let flipped: Vec<FramePair> = train_set.iter().map(|p| augment_flip(p, true)).collect();
    let target_planes: Vec<(Plane, Plane)> =
        train_set.iter().zip(&flipped).map(|(p, f)| (Plane::from_frame(&p.hc), Plane::from_frame(&f.hc))).collect();

    for epoch in 0..config.epochs {
        let lr = lr_schedule(config.lr, &config.schedule, epoch);
        let mut r = rng::rng(derive_seed(config.seed, epoch as u64 + 1));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut r);
        let flips: Vec<bool> = order.iter().map(|_| r.random_bool(config.flip_prob)).collect();
        let mut loss_sum = 0.0;
        let diverged = |error: Error, best: &Option<(f64, usize, Params<f32>)>, history: &Vec<HistoryRow>| TrainFailure {
            error,
            best: best.as_ref().map(|b| b.2.clone()),
            history: history.clone(),
        };
        for (chunk, flip_chunk) in order.chunks(config.batch_size).zip(flips.chunks(config.batch_size)) {
            let one = |(&i, &flip): (&usize, &bool)| {
                let (pair, target) = if flip { (&flipped[i], &target_planes[i].1) } else { (&train_set[i], &target_planes[i].0) };
                loss_and_grad(spec, &params, &input_of(&pair.lc), target, &config.loss)
            };
            let results: Vec<Result<(f64, Params<f32>)>> = if config.parallel {
                chunk.par_iter().zip(flip_chunk.par_iter()).map(one).collect()
            } else {
                chunk.iter().zip(flip_chunk.iter()).map(one).collect()
            };
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for res in results {
                let (l, g) = res.map_err(|e| diverged(e, &best, &history))?;
                batch_loss += l;
                grads.add_assign(&g);
            }
            if !batch_loss.is_finite() {
                let e = Error::Diverged { epoch, reason: format!("training loss {batch_loss}") };
                return Err(diverged(e, &best, &history));
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / chunk.len() as f32);
            adam.step(&mut params, &grads, lr).map_err(|e| diverged(e, &best, &history))?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = evaluate(spec, &params, val_set, &config.loss, config.parallel).map_err(|e| diverged(e, &best, &history))?;
        if !val_loss.is_finite() {
            let e = Error::Diverged { epoch, reason: format!("validation loss {val_loss}") };
            return Err(diverged(e, &best, &history));
        }
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, params.clone()));
        }
        let row = HistoryRow { epoch, lr, train_loss, val_loss };
        log::info!("epoch {epoch} lr {lr:e} train {train_loss:.6} val {val_loss:.6}");
        history.push(row);
        on_epoch(&row, &best.as_ref().unwrap().2);
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainResult { best: best_params, best_epoch, last: params, history })
}

/// Normalizes the pairs and trains.
pub fn train(
    spec: &NetworkSpec,
    config: &TrainConfig,
    train_set: &[FramePair],
    val_set: &[FramePair],
) -> std::result::Result<TrainResult, TrainFailure> {
    let fail = |error: Error| TrainFailure { error, best: None, history: Vec::new() };
    let tr = normalize_pairs(train_set).map_err(fail)?;
    let va = normalize_pairs(val_set).map_err(fail)?;
    train_normalized(spec, config, &tr, &va, None, |_, _| {})
}

/// Network output for a frame already in `[0, 1]`, clamped to `[0, 1]`.
pub fn denoise_normalized(params: &Params<f32>, spec: &NetworkSpec, input: &Frame) -> Result<Frame> {
    if !params.matches(spec) {
        return Err(Error::ShapeMismatch("parameters do not match the network spec".into()));
    }
    let out = forward_sample(spec, params, input.data(), input.height(), input.width())?;
    input.map_values(out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Normalizes `lc`, runs the network, clamps and maps back to `lc` units.
pub fn denoise(params: &Params<f32>, spec: &NetworkSpec, lc: &Frame) -> Result<Frame> {
    let (n, record) = normalize_frame(lc)?;
    record.invert(&denoise_normalized(params, spec, &n)?)
}
