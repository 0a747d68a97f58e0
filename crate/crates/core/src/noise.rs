//! Noise calibration and injection: Poisson, white Gaussian, and either of
//! them followed by a random Gaussian-kernel blur ("experimental-like").

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::frame::{Frame, FramePair};
use crate::rng::{self, derive_seed};
use crate::stats;

/// Poisson means below this use exact inversion; above, a rounded normal.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    /// Median over pairs of the low/high frame-integrated count ratio.
    pub gamma: f64,
    /// Median over low-count frames of the per-frame standard deviation.
    pub sigma: f64,
}

impl NoiseCalibration {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} not in (0, 1]")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
        }
        Ok(Self { gamma, sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    Poisson,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    pub radius: usize,
    pub std_min: f64,
    pub std_max: f64,
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self { radius: 2, std_min: 0.3, std_max: 0.5 }
    }
}

impl BlurSpec {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 || !(self.std_min > 0.0 && self.std_min <= self.std_max && self.std_max <= self.radius as f64) {
            return Err(Error::InvalidArgument(format!("invalid blur spec {self:?}")));
        }
        Ok(())
    }
}

/// A noise family with optional blur. Displayed and parsed as the pair-id
/// suffix: `pois`, `gauss`, `pois+g`, `gauss+g` (`exp` is accepted for `pois+g`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub blur: Option<BlurSpec>,
}

impl NoiseModel {
    pub const POISSON: NoiseModel = NoiseModel { family: NoiseFamily::Poisson, blur: None };
    pub const GAUSSIAN: NoiseModel = NoiseModel { family: NoiseFamily::Gaussian, blur: None };

    /// Poisson noise followed by the default random blur.
    pub fn experimental_like() -> Self {
        Self { family: NoiseFamily::Poisson, blur: Some(BlurSpec::default()) }
    }

    pub fn suffix(&self) -> &'static str {
        match (self.family, self.blur.is_some()) {
            (NoiseFamily::Poisson, false) => "pois",
            (NoiseFamily::Gaussian, false) => "gauss",
            (NoiseFamily::Poisson, true) => "pois+g",
            (NoiseFamily::Gaussian, true) => "gauss+g",
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let blur = Some(BlurSpec::default());
        Ok(match s {
            "pois" | "poisson" => NoiseModel::POISSON,
            "gauss" | "gaussian" => NoiseModel::GAUSSIAN,
            "pois+g" | "exp" => NoiseModel { family: NoiseFamily::Poisson, blur },
            "gauss+g" => NoiseModel { family: NoiseFamily::Gaussian, blur },
            _ => return Err(Error::InvalidArgument(format!("unknown noise model {s:?}"))),
        })
    }
}

/// Calibrates γ and σ from raw-count pairs.
pub fn calibrate(pairs: &[FramePair]) -> Result<NoiseCalibration> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("calibration needs at least one pair".into()));
    }
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut sigmas = Vec::with_capacity(pairs.len());
    for p in pairs {
        let hc = p.hc.total();
        if hc <= 0.0 {
            return Err(Error::ZeroIntegral(p.pair_id.clone()));
        }
        ratios.push(p.lc.total() / hc);
        let live: Vec<f64> = p.lc.live_values().map(f64::from).collect();
        if !live.is_empty() {
            sigmas.push(stats::variance(&live).sqrt());
        }
    }
    Ok(NoiseCalibration {
        gamma: stats::median(&ratios).unwrap(),
        sigma: stats::median(&sigmas).unwrap_or(0.0),
    })
}

/// Draws one Poisson variate.
///
/// Sequential-search inversion below [`POISSON_INVERSION_LIMIT`]; above it,
/// `floor(mean + sqrt(mean) z + 0.5)` clamped at zero.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u32;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 {
                break;
            }
        }
        k as f64
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (mean + mean.sqrt() * z + 0.5).floor().max(0.0)
    }
}

/// Low-count frame from a high-count frame: each pixel ~ Poisson(γ · hc).
pub fn add_poisson(hc: &Frame, gamma: f64, seed: u64) -> Result<Frame> {
    hc.check_non_negative()?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} must be non-negative")));
    }
    let mut r = rng::rng(seed);
    let data = hc
        .data()
        .iter()
        .zip(hc.dead_mask())
        .map(|(&v, &dead)| if dead { 0.0 } else { sample_poisson(gamma * v as f64, &mut r) as f32 })
        .collect();
    hc.map_values(data)
}

/// Adds i.i.d. `N(0, σ²)` to every live pixel. Values may become negative.
pub fn add_gaussian(hc: &Frame, sigma: f64, seed: u64) -> Result<Frame> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    let mut r = rng::rng(seed);
    let data = hc
        .data()
        .iter()
        .zip(hc.dead_mask())
        .map(|(&v, &dead)| {
            if dead {
                0.0
            } else {
                let z: f64 = r.sample(StandardNormal);
                (v as f64 + sigma * z) as f32
            }
        })
        .collect();
    hc.map_values(data)
}

/// Normalized `(2r+1)²` discrete Gaussian, row-major.
pub fn gaussian_kernel(radius: usize, std: f64) -> Vec<f64> {
    let n = 2 * radius + 1;
    let mut k = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (dy, dx) = (i as f64 - radius as f64, j as f64 - radius as f64);
            k.push((-(dx * dx + dy * dy) / (2.0 * std * std)).exp());
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// Convolves a row-major image with a square kernel, reflect padding.
pub fn convolve_reflect(data: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let n = (kernel.len() as f64).sqrt() as usize;
    assert_eq!(n * n, kernel.len());
    let r = (n / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for ky in 0..n {
                let sy = reflect_index(y as isize + ky as isize - r, height);
                for kx in 0..n {
                    let sx = reflect_index(x as isize + kx as isize - r, width);
                    acc += kernel[ky * n + kx] * data[sy * width + sx];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Blurs with a fixed kernel width. Dead pixels are zeroed afterwards.
pub fn blur_with_std(frame: &Frame, radius: usize, std: f64) -> Result<Frame> {
    let kernel = gaussian_kernel(radius, std);
    let out = convolve_reflect(&frame.to_f64(), frame.height(), frame.width(), &kernel);
    frame.map_values(out.into_iter().map(|v| v as f32).collect())
}

/// Kernel standard deviation drawn for a given seed.
pub fn draw_blur_std(spec: &BlurSpec, seed: u64) -> f64 {
    if spec.std_min == spec.std_max {
        return spec.std_min;
    }
    rng::rng(seed).random_range(spec.std_min..=spec.std_max)
}

/// Blurs with one kernel width drawn uniformly from the blur's width range.
pub fn blur_random_kernel(frame: &Frame, spec: &BlurSpec, seed: u64) -> Result<Frame> {
    spec.validate()?;
    blur_with_std(frame, spec.radius, draw_blur_std(spec, seed))
}

/// Applies a noise model. The noise draw uses `derive_seed(seed, 0)` and the
/// blur `derive_seed(seed, 1)`.
pub fn apply_noise(hc: &Frame, model: &NoiseModel, calibration: &NoiseCalibration, seed: u64) -> Result<Frame> {
    let noisy = match model.family {
        NoiseFamily::Poisson => add_poisson(hc, calibration.gamma, derive_seed(seed, 0))?,
        NoiseFamily::Gaussian => add_gaussian(hc, calibration.sigma, derive_seed(seed, 0))?,
    };
    match &model.blur {
        Some(b) => blur_random_kernel(&noisy, b, derive_seed(seed, 1)),
        None => Ok(noisy),
    }
}

/// Builds an artificial (LC, HC) pair; the pair id is `{base_id}-{suffix}`.
pub fn make_artificial_pair(
    hc: &Frame,
    model: &NoiseModel,
    calibration: &NoiseCalibration,
    seed: u64,
    base_id: &str,
) -> Result<FramePair> {
    let lc = apply_noise(hc, model, calibration, seed)?;
    FramePair::new(lc, hc.clone(), format!("{base_id}-{}", model.suffix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FramePair;

    fn pair(lc_sum: f32, hc_sum: f32) -> FramePair {
        FramePair::new(Frame::new(1, 2, vec![lc_sum, 0.0]).unwrap(), Frame::new(1, 2, vec![hc_sum, 0.0]).unwrap(), "p").unwrap()
    }

    #[test]
    fn calibrate_single_pair() {
        let c = calibrate(&[pair(200.0, 2000.0)]).unwrap();
        assert!((c.gamma - 0.1).abs() < 1e-15);
    }

    #[test]
    fn calibrate_odd_median() {
        let pairs = [pair(8.0, 100.0), pair(10.0, 100.0), pair(12.0, 100.0)];
        assert!((calibrate(&pairs).unwrap().gamma - 0.10).abs() < 1e-15);
    }

    #[test]
    fn calibrate_sigma_is_population_std() {
        let lc = Frame::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = FramePair::new(lc, Frame::filled(1, 4, 10.0), "p").unwrap();
        assert!((calibrate(&[p]).unwrap().sigma - 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn calibrate_zero_integral_names_pair() {
        let p = FramePair::new(Frame::filled(1, 1, 1.0), Frame::filled(1, 1, 0.0), "zero-pair").unwrap();
        match calibrate(&[p]) {
            Err(Error::ZeroIntegral(id)) => assert_eq!(id, "zero-pair"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn poisson_of_zero_is_zero() {
        let f = add_poisson(&Frame::filled(8, 8, 0.0), 0.5, 1).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_rejects_negative_input() {
        let f = Frame::new(1, 2, vec![1.0, -1.0]).unwrap();
        assert!(matches!(add_poisson(&f, 0.1, 0), Err(Error::NegativeIntensity { index: 1, .. })));
    }

    #[test]
    fn poisson_law_of_large_numbers() {
        let f = Frame::filled(1000, 1000, 1000.0);
        let out = add_poisson(&f, 0.1, 3).unwrap().to_f64();
        let (m, v) = (stats::mean(&out), stats::variance(&out));
        assert!((m / 100.0 - 1.0).abs() < 0.01, "mean {m}");
        assert!((v / 100.0 - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn poisson_small_mean_inversion_is_exact_in_distribution() {
        // P(0) = e^{-2} for mean 2
        let f = Frame::filled(500, 500, 2.0);
        let out = add_poisson(&f, 1.0, 4).unwrap();
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / out.len() as f64;
        assert!((zeros - (-2.0f64).exp()).abs() < 0.003, "{zeros}");
    }

    #[test]
    fn poisson_normal_regime_relative_deviation() {
        // gamma = 1 on mean 400: (x - m)/m ~ N(0, 1/sqrt(m))
        let f = Frame::filled(300, 300, 400.0);
        let out = add_poisson(&f, 1.0, 5).unwrap().to_f64();
        let rel: Vec<f64> = out.iter().map(|v| (v - 400.0) / 400.0).collect();
        let sd = stats::variance(&rel).sqrt();
        let m = stats::mean(&rel);
        // 4-sigma bands on the sample mean and sample std
        let n = rel.len() as f64;
        assert!(m.abs() < 4.0 * 0.05 / n.sqrt());
        assert!((sd - 0.05).abs() < 4.0 * 0.05 / (2.0 * n).sqrt() + 0.05 * 1e-3);
    }

    #[test]
    fn gaussian_tiny_sigma_is_identity() {
        let f = Frame::from_fn(4, 4, |r, c| (r * 4 + c) as f32).unwrap();
        let g = add_gaussian(&f, 1e-12, 1).unwrap();
        for (a, b) in f.data().iter().zip(g.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn gaussian_statistics_and_whiteness() {
        let f = Frame::filled(1000, 1000, 0.0);
        let g = add_gaussian(&f, 5.0, 2).unwrap().to_f64();
        assert!(stats::mean(&g).abs() < 0.02);
        assert!((stats::variance(&g).sqrt() / 5.0 - 1.0).abs() < 0.01);
        assert!(stats::lag1_autocorrelation(&g, 1000).abs() < 0.01);
    }

    #[test]
    fn seeds_give_independent_noise() {
        let f = Frame::filled(300, 300, 0.0);
        let a = add_gaussian(&f, 1.0, 1).unwrap().to_f64();
        let b = add_gaussian(&f, 1.0, 2).unwrap().to_f64();
        let cross = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
        assert!(cross.abs() < 0.01);
        assert_eq!(add_gaussian(&f, 1.0, 1).unwrap().to_f64(), a);
    }

    #[test]
    fn impulse_response_is_normalized_stamp() {
        let mut d = vec![0.0f32; 81];
        d[40] = 1.0;
        let f = Frame::new(9, 9, d).unwrap();
        let g = blur_with_std(&f, 2, 0.4).unwrap();
        let k = gaussian_kernel(2, 0.4);
        assert!((g.total() - 1.0).abs() < 1e-6);
        for r in 0..9 {
            for c in 0..9 {
                let expected = if (2..7).contains(&r) && (2..7).contains(&c) { k[(r - 2) * 5 + (c - 2)] } else { 0.0 };
                assert!((g.get(r, c) as f64 - expected).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn uniform_frame_unchanged_by_blur() {
        let f = Frame::filled(10, 7, 3.5);
        let g = blur_random_kernel(&f, &BlurSpec::default(), 3).unwrap();
        assert!(g.data().iter().all(|&v| (v - 3.5).abs() < 1e-6));
    }

    #[test]
    fn blur_matches_dense_convolution_oracle() {
        let mut r = rng::rng(8);
        let (h, w) = (12, 9);
        let data: Vec<f32> = (0..h * w).map(|_| r.random_range(0.0f32..10.0)).collect();
        let f = Frame::new(h, w, data).unwrap();
        let spec = BlurSpec { radius: 2, std_min: 0.4, std_max: 0.4 };
        let g = blur_random_kernel(&f, &spec, 99).unwrap();
        // explicit padded image, then a plain sliding sum
        let pad = 2usize;
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut padded = vec![0.0f64; ph * pw];
        for y in 0..ph {
            for x in 0..pw {
                let sy = reflect_index(y as isize - pad as isize, h);
                let sx = reflect_index(x as isize - pad as isize, w);
                padded[y * pw + x] = f.get(sy, sx) as f64;
            }
        }
        let s2 = 2.0 * 0.4 * 0.4;
        let mut norm = 0.0;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                norm += (-((dx * dx + dy * dy) as f64) / s2).exp();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -2i32..=2 {
                    for dx in -2i32..=2 {
                        let wgt = (-((dx * dx + dy * dy) as f64) / s2).exp() / norm;
                        acc += wgt * padded[(y as i32 + 2 + dy) as usize * pw + (x as i32 + 2 + dx) as usize];
                    }
                }
                assert!((g.get(y, x) as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_conserves_intensity_and_draws_in_range() {
        let f = Frame::from_fn(64, 64, |r, c| 100.0 + ((r * 7 + c * 3) % 11) as f32).unwrap();
        let g = blur_random_kernel(&f, &BlurSpec::default(), 5).unwrap();
        assert!((g.total() / f.total() - 1.0).abs() < 0.005);
        for s in 0..100 {
            let std = draw_blur_std(&BlurSpec::default(), s);
            assert!((0.3..=0.5).contains(&std));
        }
    }

    #[test]
    fn blurred_noise_autocorrelation_matches_kernel() {
        let f = Frame::filled(400, 400, 0.0);
        let noisy = add_gaussian(&f, 1.0, 7).unwrap();
        let g = blur_with_std(&noisy, 2, 0.45).unwrap().to_f64();
        let k = gaussian_kernel(2, 0.45);
        let mut num = 0.0;
        for i in 0..5 {
            for j in 0..4 {
                num += k[i * 5 + j] * k[i * 5 + j + 1];
            }
        }
        let den: f64 = k.iter().map(|v| v * v).sum();
        let expected = num / den;
        let got = stats::lag1_autocorrelation(&g, 400);
        assert!(got > 0.0 && (got / expected - 1.0).abs() < 0.1, "{got} vs {expected}");
    }

    #[test]
    fn artificial_pair_composition() {
        let hc = Frame::from_fn(16, 16, |r, c| 50.0 + (r + c) as f32).unwrap();
        let cal = NoiseCalibration::new(0.1, 2.0).unwrap();
        let p = make_artificial_pair(&hc, &NoiseModel::POISSON, &cal, 3, "a").unwrap();
        assert_eq!(p.pair_id, "a-pois");
        assert_eq!(p.lc, add_poisson(&hc, 0.1, derive_seed(3, 0)).unwrap());
        assert_eq!(p.hc, hc);

        let model: NoiseModel = "gauss+g".parse().unwrap();
        let p = make_artificial_pair(&hc, &model, &cal, 4, "b").unwrap();
        assert_eq!(p.pair_id, "b-gauss+g");
        let manual = blur_random_kernel(&add_gaussian(&hc, 2.0, derive_seed(4, 0)).unwrap(), &BlurSpec::default(), derive_seed(4, 1)).unwrap();
        assert_eq!(p.lc, manual);
        assert_eq!("exp".parse::<NoiseModel>().unwrap().suffix(), "pois+g");
    }
}
