//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, unknown keys are rejected.
//! Architecture-dependent entries default to `auto` and take the values of
//! the chosen topology; [`RunConfig::resolved`] fills them in.

use std::fmt::{self, Display};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::manifest::SplitFractions;
use crate::metrics::LossSpec;
use crate::nn::{LrSchedule, NetworkSpec, Topology, TrainConfig};
use crate::noise::NoiseModel;
use crate::synth::DEFAULT_LC_EXPOSURE_RATIO;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // scene
    pub height: usize,
    pub width: usize,
    pub n_pairs: usize,
    pub exposure_ratio: f64,
    pub jitter: bool,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    // noise
    pub noise: NoiseModel,
    // network
    pub arch: Topology,
    pub depth: Option<usize>,
    pub filters: Option<usize>,
    pub kernel: Option<usize>,
    // training
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr_first_drop: Option<usize>,
    pub lr_drop_every: Option<usize>,
    pub lr_drop_factor: Option<f64>,
    pub flip_prob: f64,
    pub loss_alpha: f64,
    pub parallel: bool,
    // analysis
    pub q0_h: f64,
    pub q0_k: f64,
    pub q0_l: f64,
    pub window_h: f64,
    pub window_k: f64,
    pub window_l: f64,
    pub flank: f64,
    pub lattice_a: f64,
    pub lattice_b: f64,
    pub lattice_c: f64,
    pub ensemble_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lat = Lattice::default();
        Self {
            seed: 0,
            height: 64,
            width: 64,
            n_pairs: 200,
            exposure_ratio: DEFAULT_LC_EXPOSURE_RATIO,
            jitter: true,
            split_train: 0.7,
            split_val: 0.2,
            split_test: 0.1,
            noise: NoiseModel::POISSON,
            arch: Topology::Vdsr,
            depth: None,
            filters: None,
            kernel: None,
            lr: None,
            batch_size: None,
            epochs: None,
            lr_first_drop: None,
            lr_drop_every: None,
            lr_drop_factor: None,
            flip_prob: 0.5,
            loss_alpha: LossSpec::default().alpha,
            parallel: true,
            q0_h: 0.23,
            q0_k: 0.0,
            q0_l: 8.5,
            window_h: 0.005,
            window_k: 0.004,
            window_l: 0.1,
            flank: 0.25,
            lattice_a: lat.a,
            lattice_b: lat.b,
            lattice_c: lat.c,
            ensemble_seeds: (0..5).collect(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_auto<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" { Ok(None) } else { parse(key, v).map(Some) }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn auto<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Sets one entry. Errors name the key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "n_pairs" => self.n_pairs = parse(key, v)?,
            "exposure_ratio" => self.exposure_ratio = parse(key, v)?,
            "jitter" => self.jitter = parse_bool(key, v)?,
            "split_train" => self.split_train = parse(key, v)?,
            "split_val" => self.split_val = parse(key, v)?,
            "split_test" => self.split_test = parse(key, v)?,
            "noise" => self.noise = v.parse().map_err(|e: Error| Error::Config(format!("noise: {e}")))?,
            "arch" => self.arch = v.parse()?,
            "depth" => self.depth = parse_auto(key, v)?,
            "filters" => self.filters = parse_auto(key, v)?,
            "kernel" => self.kernel = parse_auto(key, v)?,
            "lr" => self.lr = parse_auto(key, v)?,
            "batch_size" => self.batch_size = parse_auto(key, v)?,
            "epochs" => self.epochs = parse_auto(key, v)?,
            "lr_first_drop" => self.lr_first_drop = parse_auto(key, v)?,
            "lr_drop_every" => self.lr_drop_every = parse_auto(key, v)?,
            "lr_drop_factor" => self.lr_drop_factor = parse_auto(key, v)?,
            "flip_prob" => self.flip_prob = parse(key, v)?,
            "loss_alpha" => self.loss_alpha = parse(key, v)?,
            "parallel" => self.parallel = parse_bool(key, v)?,
            "q0_h" => self.q0_h = parse(key, v)?,
            "q0_k" => self.q0_k = parse(key, v)?,
            "q0_l" => self.q0_l = parse(key, v)?,
            "window_h" => self.window_h = parse(key, v)?,
            "window_k" => self.window_k = parse(key, v)?,
            "window_l" => self.window_l = parse(key, v)?,
            "flank" => self.flank = parse(key, v)?,
            "lattice_a" => self.lattice_a = parse(key, v)?,
            "lattice_b" => self.lattice_b = parse(key, v)?,
            "lattice_c" => self.lattice_c = parse(key, v)?,
            "ensemble_seeds" => {
                self.ensemble_seeds = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?;
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every entry in a fixed order, as written by [`Display`].
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("n_pairs", self.n_pairs.to_string()),
            ("exposure_ratio", self.exposure_ratio.to_string()),
            ("jitter", self.jitter.to_string()),
            ("split_train", self.split_train.to_string()),
            ("split_val", self.split_val.to_string()),
            ("split_test", self.split_test.to_string()),
            ("noise", self.noise.to_string()),
            ("arch", self.arch.to_string()),
            ("depth", auto(&self.depth)),
            ("filters", auto(&self.filters)),
            ("kernel", auto(&self.kernel)),
            ("lr", auto(&self.lr)),
            ("batch_size", auto(&self.batch_size)),
            ("epochs", auto(&self.epochs)),
            ("lr_first_drop", auto(&self.lr_first_drop)),
            ("lr_drop_every", auto(&self.lr_drop_every)),
            ("lr_drop_factor", auto(&self.lr_drop_factor)),
            ("flip_prob", self.flip_prob.to_string()),
            ("loss_alpha", self.loss_alpha.to_string()),
            ("parallel", self.parallel.to_string()),
            ("q0_h", self.q0_h.to_string()),
            ("q0_k", self.q0_k.to_string()),
            ("q0_l", self.q0_l.to_string()),
            ("window_h", self.window_h.to_string()),
            ("window_k", self.window_k.to_string()),
            ("window_l", self.window_l.to_string()),
            ("flank", self.flank.to_string()),
            ("lattice_a", self.lattice_a.to_string()),
            ("lattice_b", self.lattice_b.to_string()),
            ("lattice_c", self.lattice_c.to_string()),
            ("ensemble_seeds", self.ensemble_seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")),
        ]
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", no + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn split_fractions(&self) -> SplitFractions {
        SplitFractions { train: self.split_train, val: self.split_val, test: self.split_test }
    }

    pub fn lattice(&self) -> Lattice {
        Lattice { a: self.lattice_a, b: self.lattice_b, c: self.lattice_c }
    }

    pub fn q0(&self) -> [f64; 3] {
        [self.q0_h, self.q0_k, self.q0_l]
    }

    pub fn window(&self) -> [f64; 3] {
        [self.window_h, self.window_k, self.window_l]
    }

    pub fn network(&self) -> NetworkSpec {
        let d = NetworkSpec::for_topology(self.arch);
        NetworkSpec {
            topology: self.arch,
            depth: self.depth.unwrap_or(d.depth),
            filters: self.filters.unwrap_or(d.filters),
            kernel: self.kernel.unwrap_or(d.kernel),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::for_topology(self.arch);
        let schedule = match d.schedule {
            LrSchedule::Step { first, every, factor } => LrSchedule::Step {
                first: self.lr_first_drop.unwrap_or(first),
                every: self.lr_drop_every.unwrap_or(every),
                factor: self.lr_drop_factor.unwrap_or(factor),
            },
            LrSchedule::Constant => LrSchedule::Constant,
        };
        TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            schedule,
            flip_prob: self.flip_prob,
            seed: self.seed,
            loss: LossSpec { alpha: self.loss_alpha, ..d.loss },
            adam: d.adam,
            parallel: self.parallel,
        }
    }

    /// Checks every entry that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!("frame size {}x{} is below 8x8", self.height, self.width)));
        }
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be positive".into()));
        }
        if !(self.exposure_ratio > 0.0 && self.exposure_ratio <= 1.0) {
            return Err(Error::Config(format!("exposure_ratio {} not in (0, 1]", self.exposure_ratio)));
        }
        self.split_fractions().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.network().validate()?;
        self.train_config().validate()?;
        if !(0.0..=1.0).contains(&self.loss_alpha) {
            return Err(Error::Config(format!("loss_alpha {} not in [0, 1]", self.loss_alpha)));
        }
        if !(self.flank > 0.0 && self.flank <= 0.4) {
            return Err(Error::Config(format!("flank {} not in (0, 0.4]", self.flank)));
        }
        if self.window().iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("scan windows must be non-negative".into()));
        }
        if [self.lattice_a, self.lattice_b, self.lattice_c].iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config("lattice constants must be positive".into()));
        }
        if self.ensemble_seeds.is_empty() {
            return Err(Error::Config("ensemble_seeds must list at least one seed".into()));
        }
        Ok(())
    }

    /// A copy with every `auto` entry replaced by its value.
    pub fn resolved(&self) -> Self {
        let net = self.network();
        let tc = self.train_config();
        let (first, every, factor) = match tc.schedule {
            LrSchedule::Step { first, every, factor } => (Some(first), Some(every), Some(factor)),
            LrSchedule::Constant => (None, None, None),
        };
        Self {
            depth: Some(net.depth),
            filters: Some(net.filters),
            kernel: Some(net.kernel),
            lr: Some(tc.lr),
            batch_size: Some(tc.batch_size),
            epochs: Some(tc.epochs),
            lr_first_drop: first,
            lr_drop_every: every,
            lr_drop_factor: factor,
            ..self.clone()
        }
    }
}

impl Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
