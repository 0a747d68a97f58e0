//! Denoising workbench for reciprocal-space X-ray diffraction frames.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod frame;
pub mod io;
pub mod lattice;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use frame::{AxisLabel, AxisSpec, Frame, FramePair, NormalizationRecord, ReciprocalAxes};
pub use manifest::{DatasetManifest, ManifestEntry, Split, SplitFractions};
pub use metrics::{LossSpec, MssimParams, Plane};
pub use noise::{NoiseCalibration, NoiseFamily, NoiseModel};
