//! Building blocks for end-to-end runs on synthetic data: noisy pairs from
//! ground truth, split selection, and per-pair evaluation.
//!
//! Evaluation happens in normalized space: the network output (in `[0, 1]`)
//! is compared with the min-max normalized clean frame, and the noisy input
//! is scored the same way.

use rayon::prelude::*;

use crate::analysis::peak::{fit_scan, AxisFits};
use crate::analysis::scan::{project_scan, subtract_background, ScanProjection};
use crate::error::{Error, Result};
use crate::frame::{normalize_frame, AxisLabel, Frame, FramePair};
use crate::manifest::Split;
use crate::metrics::{self, LossSpec, MssimParams};
use crate::nn::train::{denoise, denoise_normalized};
use crate::nn::{NetworkSpec, Params};
use crate::noise::{apply_noise, make_artificial_pair, NoiseCalibration, NoiseModel};
use crate::rng::derive_seed;
use crate::synth::GroundTruth;

/// The stand-in for measured low-count data: Poisson counts at the true
/// exposure ratio followed by a random detector blur.
pub fn experimental_pairs(gt: &GroundTruth, seed: u64) -> Result<Vec<FramePair>> {
    let truth = NoiseCalibration::new(gt.lc_exposure_ratio, 1.0)?;
    artificial_pairs(gt, &NoiseModel::experimental_like(), &truth, seed)
}

/// One noisy pair per clean frame; pair `i` uses `derive_seed(seed, i)`.
pub fn artificial_pairs(gt: &GroundTruth, model: &NoiseModel, cal: &NoiseCalibration, seed: u64) -> Result<Vec<FramePair>> {
    (0..gt.len())
        .into_par_iter()
        .map(|i| make_artificial_pair(&gt.hc_frames[i], model, cal, derive_seed(seed, i as u64), &gt.pair_ids[i]))
        .collect()
}

/// Items whose tag equals `split`.
pub fn select<T: Clone>(items: &[T], tags: &[Split], split: Split) -> Vec<T> {
    items.iter().zip(tags).filter(|(_, t)| **t == split).map(|(x, _)| x.clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub pair_id: String,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub mssim_noisy: f64,
    pub mssim_denoised: f64,
    pub quality_noisy: f64,
    pub quality_denoised: f64,
}

/// Normalized (noisy, denoised, clean) frames of one pair.
pub fn denoise_pair(spec: &NetworkSpec, params: &Params<f32>, pair: &FramePair) -> Result<(Frame, Frame, Frame)> {
    let (lc, _) = normalize_frame(&pair.lc)?;
    let (hc, _) = normalize_frame(&pair.hc)?;
    let out = denoise_normalized(params, spec, &lc)?;
    Ok((lc, out, hc))
}

pub fn evaluate_pair(spec: &NetworkSpec, params: &Params<f32>, pair: &FramePair) -> Result<EvalRow> {
    let (lc, out, hc) = denoise_pair(spec, params, pair)?;
    let ms = MssimParams::default();
    let loss = LossSpec::default();
    Ok(EvalRow {
        pair_id: pair.pair_id.clone(),
        psnr_noisy: metrics::psnr(&lc, &hc, 1.0)?,
        psnr_denoised: metrics::psnr(&out, &hc, 1.0)?,
        mssim_noisy: metrics::mssim(&lc, &hc, &ms)?,
        mssim_denoised: metrics::mssim(&out, &hc, &ms)?,
        quality_noisy: metrics::quality(&lc, &hc, &loss)?,
        quality_denoised: metrics::quality(&out, &hc, &loss)?,
    })
}

pub fn evaluate(spec: &NetworkSpec, params: &Params<f32>, pairs: &[FramePair]) -> Result<Vec<EvalRow>> {
    pairs.par_iter().map(|p| evaluate_pair(spec, params, p)).collect()
}

pub fn write_eval_csv<W: std::io::Write>(rows: &[EvalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "pair_id",
        "psnr_noisy",
        "psnr_denoised",
        "mssim_noisy",
        "mssim_denoised",
        "quality_noisy",
        "quality_denoised",
    ])?;
    for r in rows {
        w.write_record([
            r.pair_id.clone(),
            r.psnr_noisy.to_string(),
            r.psnr_denoised.to_string(),
            r.mssim_noisy.to_string(),
            r.mssim_denoised.to_string(),
            r.quality_noisy.to_string(),
            r.quality_denoised.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv<R: std::io::Read>(src: R) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_reader(src);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidFrame(format!("bad metric field {i} in {rec:?}")))
        };
        rows.push(EvalRow {
            pair_id: rec.get(0).unwrap_or_default().to_string(),
            psnr_noisy: num(1)?,
            psnr_denoised: num(2)?,
            mssim_noisy: num(3)?,
            mssim_denoised: num(4)?,
            quality_noisy: num(5)?,
            quality_denoised: num(6)?,
        });
    }
    Ok(rows)
}

/// Noisy copy of a frame stack; frame `i` uses `derive_seed(seed, i)`.
pub fn noisy_stack(stack: &[Frame], model: &NoiseModel, cal: &NoiseCalibration, seed: u64) -> Result<Vec<Frame>> {
    (0..stack.len())
        .into_par_iter()
        .map(|i| apply_noise(&stack[i], model, cal, derive_seed(seed, i as u64)))
        .collect()
}

/// Denoises every frame of a low-count stack and rescales it by `1/gamma`
/// to high-count units.
pub fn denoise_stack(spec: &NetworkSpec, params: &Params<f32>, stack: &[Frame], gamma: f64) -> Result<Vec<Frame>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("exposure ratio {gamma} must be positive")));
    }
    stack
        .par_iter()
        .map(|f| {
            let d = denoise(params, spec, f)?;
            d.map_values(d.data().iter().map(|&v| (v as f64 / gamma) as f32).collect())
        })
        .collect()
}

/// Background-subtracted h, k and ℓ scans through `q0`.
pub fn peak_scans(stack: &[Frame], q0: [f64; 3], window: [f64; 3], flank: f64) -> Result<[ScanProjection; 3]> {
    let scan = |axis| subtract_background(&project_scan(stack, q0, axis, window)?, flank);
    Ok([scan(AxisLabel::H)?, scan(AxisLabel::K)?, scan(AxisLabel::L)?])
}

pub fn fit_peak_scans(scans: &[ScanProjection; 3]) -> Result<AxisFits> {
    Ok(AxisFits { h: fit_scan(&scans[0])?, k: fit_scan(&scans[1])?, l: fit_scan(&scans[2])? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::peak::PeakQuantities;
    use crate::lattice::Lattice;
    use crate::synth::{render_stack, SceneSpec, DEFAULT_XI_A, DEFAULT_XI_C};

    #[test]
    fn default_scene_fits_hit_the_targets() {
        let scene = SceneSpec::default_scene();
        let stack = render_stack(&scene, 0).unwrap();
        let scans = peak_scans(&stack, [0.23, 0.0, 8.5], [0.005, 0.004, 0.1], 0.25).unwrap();
        let fits = fit_peak_scans(&scans).unwrap();
        let q = PeakQuantities::from_fits(&fits, &Lattice::default());
        assert!((q.xi_a.unwrap().value / DEFAULT_XI_A - 1.0).abs() < 0.02);
        assert!((q.xi_c.unwrap().value / DEFAULT_XI_C - 1.0).abs() < 0.02);
        assert!((fits.h.center - 0.23).abs() <= scene.axes.cols.step.abs());
    }

    #[test]
    fn eval_csv_round_trip() {
        let row = EvalRow {
            pair_id: "p-pois".into(),
            psnr_noisy: 12.5,
            psnr_denoised: 30.25,
            mssim_noisy: 0.5,
            mssim_denoised: 0.875,
            quality_noisy: 0.25,
            quality_denoised: 0.75,
        };
        let mut buf = Vec::new();
        write_eval_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        assert_eq!(read_eval_csv(&buf[..]).unwrap(), vec![row]);
    }
}
