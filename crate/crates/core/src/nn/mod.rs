//! Residual CNN engine: tensors, layers, the two topologies, the optimizer
//! and the training loop.
//!
//! Everything is generic over [`Real`]; training runs in `f32` and the
//! gradient checks in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{ConvLayer, NetworkSpec, Params, Topology};
pub use optim::{he_init, lr_schedule, AdamState, LrSchedule};
pub use tensor::Tensor4;
pub use train::{denoise, train, train_normalized, HistoryRow, TrainConfig, TrainFailure, TrainResult};

pub trait Real: Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}
