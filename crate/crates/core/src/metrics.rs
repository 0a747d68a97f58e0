//! Image-quality measures and the training loss.
//!
//! MS-SSIM here uses whole-image statistics at every scale (means, population
//! standard deviations and covariance), with 2×2 mean pooling between scales.
//! Structure terms are clamped at zero before exponentiation, and the
//! luminance term enters through its absolute value.

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Reported when two images are identical.
pub const PSNR_CAP_DB: f64 = 200.0;

/// Floor of the log-scaled Δ display.
pub const DELTA_LOG_FLOOR: f64 = -5.0;

/// Note attached to metric outputs: MAE is divided by the pixel count.
pub const MAE_NORMALIZATION_NOTE: &str = "mae = sum|x-y| / pixel_count";

/// Row-major f64 image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "plane size");
        Self { height, width, data }
    }

    pub fn from_frame(f: &Frame) -> Self {
        Self::new(f.height(), f.width(), f.to_f64())
    }

    /// 2×2 mean pooling; a trailing odd row/column is dropped.
    pub fn pool2(&self) -> Plane {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            let r0 = &self.data[2 * y * self.width..];
            let r1 = &self.data[(2 * y + 1) * self.width..];
            for x in 0..w {
                data.push(0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]));
            }
        }
        Plane::new(h, w, data)
    }

    /// Adjoint of [`Plane::pool2`] onto a `height × width` grid.
    fn unpool2(&self, height: usize, width: usize) -> Plane {
        let mut data = vec![0.0; height * width];
        for y in 0..self.height {
            for x in 0..self.width {
                let g = 0.25 * self.data[y * self.width + x];
                data[2 * y * width + 2 * x] = g;
                data[2 * y * width + 2 * x + 1] = g;
                data[(2 * y + 1) * width + 2 * x] = g;
                data[(2 * y + 1) * width + 2 * x + 1] = g;
            }
        }
        Plane::new(height, width, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MssimParams {
    pub weights: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for MssimParams {
    fn default() -> Self {
        Self {
            weights: vec![0.0448, 0.2856, 0.3001, 0.2363, 0.1333],
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl MssimParams {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if self.weights.is_empty() || (sum - 1.0).abs() > 1e-3 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidArgument(format!("MS-SSIM weights {:?} must sum to 1", self.weights)));
        }
        if !(self.k1 > 0.0 && self.k1 < 1.0 && self.k2 > 0.0 && self.k2 < 1.0 && self.dynamic_range > 0.0) {
            return Err(Error::InvalidArgument("invalid MS-SSIM constants".into()));
        }
        Ok(())
    }

    /// Weights actually used for an image of the given size: the largest
    /// number of scales with both sides `>= 2^(M-1)`, renormalized to sum 1.
    pub fn effective_weights(&self, height: usize, width: usize) -> Vec<f64> {
        let mut m = self.weights.len();
        while m > 1 && (height < 1 << (m - 1) || width < 1 << (m - 1)) {
            m -= 1;
        }
        let w = &self.weights[..m];
        let s: f64 = w.iter().sum();
        if m == self.weights.len() {
            w.to_vec()
        } else {
            w.iter().map(|v| v / s).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub alpha: f64,
    pub mssim: MssimParams,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { alpha: 0.7, mssim: MssimParams::default() }
    }
}

fn check_shapes(x: &Plane, y: &Plane) -> Result<()> {
    if x.height != y.height || x.width != y.width {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    if x.data.is_empty() {
        return Err(Error::ShapeMismatch("empty image".into()));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn mae_plane(x: &Plane, y: &Plane) -> Result<f64> {
    check_shapes(x, y)?;
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.data.len() as f64)
}

pub fn mae_gradient_plane(x: &Plane, y: &Plane) -> Result<Plane> {
    check_shapes(x, y)?;
    let n = x.data.len() as f64;
    let g = x.data.iter().zip(&y.data).map(|(a, b)| sign(a - b) / n).collect();
    Ok(Plane::new(x.height, x.width, g))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Statistics of one scale.
#[derive(Debug, Clone, Copy)]
struct ScaleStats {
    mu_x: f64,
    mu_y: f64,
    sd_x: f64,
    sd_y: f64,
    cov: f64,
    n: f64,
}

impl ScaleStats {
    fn of(x: &Plane, y: &Plane) -> Self {
        let n = x.data.len() as f64;
        let mu_x = x.data.iter().sum::<f64>() / n;
        let mu_y = y.data.iter().sum::<f64>() / n;
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for (a, b) in x.data.iter().zip(&y.data) {
            let (dx, dy) = (a - mu_x, b - mu_y);
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
        Self { mu_x, mu_y, sd_x: (vx / n).sqrt(), sd_y: (vy / n).sqrt(), cov: cxy / n, n }
    }
}

struct Constants {
    c1: f64,
    c2: f64,
    c3: f64,
}

impl Constants {
    fn new(p: &MssimParams) -> Self {
        let c1 = (p.k1 * p.dynamic_range).powi(2);
        let c2 = (p.k2 * p.dynamic_range).powi(2);
        Self { c1, c2, c3: c2 / 2.0 }
    }
}

fn luminance(s: &ScaleStats, k: &Constants) -> f64 {
    (2.0 * s.mu_x * s.mu_y + k.c1) / (s.mu_x * s.mu_x + s.mu_y * s.mu_y + k.c1)
}

fn contrast(s: &ScaleStats, k: &Constants) -> f64 {
    (2.0 * s.sd_x * s.sd_y + k.c2) / (s.sd_x * s.sd_x + s.sd_y * s.sd_y + k.c2)
}

fn structure(s: &ScaleStats, k: &Constants) -> f64 {
    (s.cov + k.c3) / (s.sd_x * s.sd_y + k.c3)
}

/// Per-scale components, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MssimComponents {
    pub luminance: f64,
    pub contrast: Vec<f64>,
    pub structure: Vec<f64>,
    pub weights: Vec<f64>,
    pub value: f64,
}

fn pyramid(x: &Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![x.clone()];
    for _ in 1..levels {
        let next = out.last().unwrap().pool2();
        out.push(next);
    }
    out
}

pub fn mssim_components(x: &Plane, y: &Plane, params: &MssimParams) -> Result<MssimComponents> {
    check_shapes(x, y)?;
    params.validate()?;
    let weights = params.effective_weights(x.height, x.width);
    let k = Constants::new(params);
    let (px, py) = (pyramid(x, weights.len()), pyramid(y, weights.len()));
    let stats: Vec<ScaleStats> = px.iter().zip(&py).map(|(a, b)| ScaleStats::of(a, b)).collect();
    let contrast: Vec<f64> = stats.iter().map(|s| contrast(s, &k)).collect();
    let structure: Vec<f64> = stats.iter().map(|s| structure(s, &k)).collect();
    let lum = luminance(stats.last().unwrap(), &k);
    let m = weights.len();
    let mut value = lum.abs().powf(weights[m - 1]);
    for j in 0..m {
        value *= contrast[j].powf(weights[j]) * structure[j].max(0.0).powf(weights[j]);
    }
    Ok(MssimComponents { luminance: lum, contrast, structure, weights, value })
}

pub fn mssim_plane(x: &Plane, y: &Plane, params: &MssimParams) -> Result<f64> {
    Ok(mssim_components(x, y, params)?.value)
}

/// ∂MSSIM/∂x.
pub fn mssim_gradient_plane(x: &Plane, y: &Plane, params: &MssimParams) -> Result<(f64, Plane)> {
    check_shapes(x, y)?;
    params.validate()?;
    let weights = params.effective_weights(x.height, x.width);
    let m = weights.len();
    let k = Constants::new(params);
    let (px, py) = (pyramid(x, m), pyramid(y, m));
    let stats: Vec<ScaleStats> = px.iter().zip(&py).map(|(a, b)| ScaleStats::of(a, b)).collect();
    let lum = luminance(&stats[m - 1], &k);
    let mut value = lum.abs().powf(weights[m - 1]);
    for (j, s) in stats.iter().enumerate() {
        value *= contrast(s, &k).powf(weights[j]) * structure(s, &k).max(0.0).powf(weights[j]);
    }
    if value == 0.0 {
        return Ok((0.0, Plane::new(x.height, x.width, vec![0.0; x.data.len()])));
    }

    // d ln(MSSIM) / d x at each scale, then pooled back to full resolution.
    let mut acc: Option<Plane> = None;
    for j in (0..m).rev() {
        let s = &stats[j];
        let (xs, ys) = (&px[j], &py[j]);
        let n = s.n;
        let c = contrast(s, &k);
        let st = structure(s, &k);
        let p_num = 2.0 * s.sd_x * s.sd_y + k.c2;
        let q_den = s.sd_x * s.sd_x + s.sd_y * s.sd_y + k.c2;
        let r_num = s.cov + k.c3;
        let s_den = s.sd_x * s.sd_y + k.c3;
        let (l_num, l_den) = (2.0 * s.mu_x * s.mu_y + k.c1, s.mu_x * s.mu_x + s.mu_y * s.mu_y + k.c1);
        let w = weights[j];
        let mut g = Vec::with_capacity(xs.data.len());
        for (xi, yi) in xs.data.iter().zip(&ys.data) {
            let dx = xi - s.mu_x;
            let dsd = if s.sd_x > 0.0 { dx / (n * s.sd_x) } else { 0.0 };
            let dvar = 2.0 * dx / n;
            let dcov = (yi - s.mu_y) / n;
            let dc = (2.0 * s.sd_y * dsd * q_den - p_num * dvar) / (q_den * q_den);
            let ds = (dcov * s_den - r_num * s.sd_y * dsd) / (s_den * s_den);
            let mut d = w * (dc / c + ds / st);
            if j == m - 1 {
                let dl = (2.0 * s.mu_y / n * l_den - l_num * 2.0 * s.mu_x / n) / (l_den * l_den);
                d += w * dl / lum;
            }
            g.push(d);
        }
        let mut here = Plane::new(xs.height, xs.width, g);
        if let Some(coarser) = acc.take() {
            let up = coarser.unpool2(xs.height, xs.width);
            here.data.iter_mut().zip(&up.data).for_each(|(a, b)| *a += b);
        }
        acc = Some(here);
    }
    let mut grad = acc.unwrap();
    grad.data.iter_mut().for_each(|v| *v *= value);
    Ok((value, grad))
}

/// `(1-α)·MAE + α·(1-MSSIM)`.
pub fn combined_loss_plane(x: &Plane, y: &Plane, spec: &LossSpec) -> Result<f64> {
    Ok((1.0 - spec.alpha) * mae_plane(x, y)? + spec.alpha * (1.0 - mssim_plane(x, y, &spec.mssim)?))
}

/// Loss and its gradient with respect to `x`.
pub fn combined_loss_gradient_plane(x: &Plane, y: &Plane, spec: &LossSpec) -> Result<(f64, Plane)> {
    let mae = mae_plane(x, y)?;
    let gm = mae_gradient_plane(x, y)?;
    let (ms, gs) = mssim_gradient_plane(x, y, &spec.mssim)?;
    let loss = (1.0 - spec.alpha) * mae + spec.alpha * (1.0 - ms);
    let g = gm.data.iter().zip(&gs.data).map(|(a, b)| (1.0 - spec.alpha) * a - spec.alpha * b).collect();
    Ok((loss, Plane::new(x.height, x.width, g)))
}

pub fn mae(x: &Frame, y: &Frame) -> Result<f64> {
    mae_plane(&Plane::from_frame(x), &Plane::from_frame(y))
}

pub fn mssim(x: &Frame, y: &Frame, params: &MssimParams) -> Result<f64> {
    mssim_plane(&Plane::from_frame(x), &Plane::from_frame(y), params)
}

pub fn mssim_gradient(x: &Frame, y: &Frame, params: &MssimParams) -> Result<Plane> {
    Ok(mssim_gradient_plane(&Plane::from_frame(x), &Plane::from_frame(y), params)?.1)
}

pub fn combined_loss(x: &Frame, y: &Frame, spec: &LossSpec) -> Result<f64> {
    combined_loss_plane(&Plane::from_frame(x), &Plane::from_frame(y), spec)
}

/// Reported quality: `1 - loss`, so that 1 is perfect.
pub fn quality(x: &Frame, y: &Frame, spec: &LossSpec) -> Result<f64> {
    Ok(1.0 - combined_loss(x, y, spec)?)
}

pub fn psnr_plane(x: &Plane, y: &Plane, peak: f64) -> Result<f64> {
    check_shapes(x, y)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak {peak} must be positive")));
    }
    let mse = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

pub fn psnr(x: &Frame, y: &Frame, peak: f64) -> Result<f64> {
    psnr_plane(&Plane::from_frame(x), &Plane::from_frame(y), peak)
}

/// Per-pixel `(hc - do) / (hc + do)`; pixels where the denominator vanishes get 0.
pub fn delta_heatmap(hc: &Frame, denoised: &Frame) -> Result<Frame> {
    if !hc.same_shape(denoised) {
        return Err(Error::ShapeMismatch("delta heatmap inputs differ in shape".into()));
    }
    let data = hc
        .data()
        .iter()
        .zip(denoised.data())
        .map(|(&a, &b)| {
            let (a, b) = (a as f64, b as f64);
            let s = a + b;
            if s == 0.0 { 0.0 } else { ((a - b) / s) as f32 }
        })
        .collect();
    Frame::new(hc.height(), hc.width(), data)
}

/// `log10|Δ|` clipped to `[-5, 0]`; zero Δ maps to the floor.
pub fn delta_display(delta: &Frame) -> Frame {
    let data = delta
        .data()
        .iter()
        .map(|&d| {
            let a = (d as f64).abs();
            if a == 0.0 { DELTA_LOG_FLOOR as f32 } else { a.log10().clamp(DELTA_LOG_FLOOR, 0.0) as f32 }
        })
        .collect();
    Frame::new(delta.height(), delta.width(), data).expect("finite display values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_plane(h: usize, w: usize, seed: u64) -> Plane {
        let mut r = rng::rng(seed);
        Plane::new(h, w, (0..h * w).map(|_| r.random::<f64>()).collect())
    }

    #[test]
    fn mae_cases() {
        let a = Plane::new(1, 2, vec![0.0, 0.0]);
        let b = Plane::new(1, 2, vec![1.0, 1.0]);
        assert_eq!(mae_plane(&a, &a).unwrap(), 0.0);
        assert_eq!(mae_plane(&a, &b).unwrap(), 1.0);
        let c = Plane::new(2, 1, vec![1.0, 1.0]);
        assert!(matches!(mae_plane(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mae_matches_direct_sum() {
        let (x, y) = (random_plane(9, 7, 1), random_plane(9, 7, 2));
        let mut s = 0.0;
        for i in 0..63 {
            s += (x.data[i] - y.data[i]).abs();
        }
        assert!((mae_plane(&x, &y).unwrap() - s / 63.0).abs() < 1e-12);
    }

    #[test]
    fn mssim_of_identical_is_one() {
        let x = random_plane(32, 40, 3);
        assert!((mssim_plane(&x, &x, &MssimParams::default()).unwrap() - 1.0).abs() < 1e-12);
        let z = Plane::new(4, 4, vec![0.0; 16]);
        assert_eq!(mssim_plane(&z, &z, &MssimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn anti_correlated_checkerboard_is_near_zero() {
        let x = Plane::new(16, 16, (0..256).map(|i| ((i / 16 + i % 16) % 2) as f64).collect());
        let y = Plane::new(16, 16, x.data.iter().map(|v| 1.0 - v).collect());
        let comp = mssim_components(&x, &y, &MssimParams::default()).unwrap();
        // closed form on a two-valued image: σ = 1/2, σxy = -1/4
        let c3 = 0.03f64.powi(2) / 2.0;
        assert!((comp.structure[0] - (-0.25 + c3) / (0.25 + c3)).abs() < 1e-12);
        assert!((comp.contrast[0] - 1.0).abs() < 1e-12);
        assert!(comp.structure[1..].iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert_eq!(comp.value, 0.0);
    }

    #[test]
    fn small_images_use_fewer_scales() {
        let p = MssimParams::default();
        assert_eq!(p.effective_weights(64, 64).len(), 5);
        let w = p.effective_weights(5, 9);
        assert_eq!(w.len(), 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_zero_images_is_finite() {
        let z = Plane::new(8, 8, vec![0.0; 64]);
        let (v, g) = mssim_gradient_plane(&z, &z, &MssimParams::default()).unwrap();
        assert_eq!(v, 1.0);
        assert!(g.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradient_points_towards_target() {
        let y = random_plane(16, 16, 5);
        let x = Plane::new(16, 16, y.data.iter().map(|v| v + 0.05).collect());
        let g = mssim_gradient(&to_frame(&x), &to_frame(&y), &MssimParams::default()).unwrap();
        let dot: f64 = g.data.iter().zip(x.data.iter().zip(&y.data)).map(|(g, (a, b))| g * (b - a)).sum();
        assert!(dot > 0.0);
    }

    fn to_frame(p: &Plane) -> Frame {
        Frame::new(p.height, p.width, p.data.iter().map(|&v| v as f32).collect()).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Plane::new(2, 2, vec![0.0; 4]);
        let b = Plane::new(2, 2, vec![1.0; 4]);
        assert_eq!(psnr_plane(&a, &b, 1.0).unwrap(), 0.0);
        assert_eq!(psnr_plane(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let c = Plane::new(2, 2, vec![0.01; 4]);
        assert!((psnr_plane(&a, &c, 1.0).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn combined_loss_identity_and_quality() {
        let x = to_frame(&random_plane(16, 16, 9));
        let spec = LossSpec::default();
        assert!(combined_loss(&x, &x, &spec).unwrap().abs() < 1e-12);
        assert!((quality(&x, &x, &spec).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_extremes() {
        let hc = Frame::new(1, 3, vec![1.0, 0.5, 0.0]).unwrap();
        let dn = Frame::new(1, 3, vec![0.0, 0.5, 0.0]).unwrap();
        let d = delta_heatmap(&hc, &dn).unwrap();
        assert_eq!(d.data(), &[1.0, 0.0, 0.0]);
        assert_eq!(delta_display(&d).data(), &[0.0, -5.0, -5.0]);
    }

    #[test]
    fn delta_matches_direct_formula() {
        let (a, b) = (to_frame(&random_plane(6, 6, 1)), to_frame(&random_plane(6, 6, 2)));
        let d = delta_heatmap(&a, &b).unwrap();
        for i in 0..36 {
            let (x, y) = (a.data()[i] as f64, b.data()[i] as f64);
            assert!((d.data()[i] as f64 - (x - y) / (x + y)).abs() < 1e-7);
        }
    }

    fn fd_check(x: &Plane, y: &Plane, spec: &LossSpec) {
        let (_, g) = combined_loss_gradient_plane(x, y, spec).unwrap();
        let gmax = g.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut a = x.clone();
            a.data[i] += h;
            let mut b = x.clone();
            b.data[i] -= h;
            let num = (combined_loss_plane(&a, y, spec).unwrap() - combined_loss_plane(&b, y, spec).unwrap()) / (2.0 * h);
            let err = (g.data[i] - num).abs() / g.data[i].abs().max(num.abs()).max(1e-3 * gmax);
            assert!(err < 1e-4, "pixel {i}: analytic {} numeric {num}", g.data[i]);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let y = random_plane(24, 20, 21);
        // keep x away from y so the MAE kink is not straddled
        let x = Plane::new(24, 20, y.data.iter().zip(&random_plane(24, 20, 22).data).map(|(a, b)| a + 0.3 * b + 0.01).collect());
        fd_check(&x, &y, &LossSpec::default());
        let y3 = random_plane(7, 9, 5);
        let x3 = Plane::new(7, 9, y3.data.iter().zip(&random_plane(7, 9, 6).data).map(|(a, b)| a + 0.2 * b).collect());
        assert!(mssim_plane(&x3, &y3, &MssimParams::default()).unwrap() > 0.1);
        fd_check(&x3, &y3, &LossSpec { alpha: 1.0, ..LossSpec::default() });
    }

    #[test]
    fn mssim_two_scale_hand_computation() {
        // 2x2 image, two scales; second scale is a single pixel
        let params = MssimParams { weights: vec![0.4, 0.6], ..MssimParams::default() };
        let x = Plane::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let y = Plane::new(2, 2, vec![0.1, 0.3, 0.2, 0.5]);
        let (c1, c2) = (1e-4, 9e-4);
        let c3 = c2 / 2.0;
        let (mx, my) = (0.25f64, 0.275f64);
        let vx = (0.15f64.powi(2) + 0.05f64.powi(2)) * 2.0 / 4.0;
        let vy = (0.175f64.powi(2) + 0.025f64.powi(2) + 0.075f64.powi(2) + 0.225f64.powi(2)) / 4.0;
        let cxy = (-0.15 * -0.175 + -0.05 * 0.025 + 0.05 * -0.075 + 0.15 * 0.225) / 4.0;
        let cs0 = ((2.0 * vx.sqrt() * vy.sqrt() + c2) / (vx + vy + c2)).powf(0.4)
            * ((cxy + c3) / (vx.sqrt() * vy.sqrt() + c3)).powf(0.4);
        let l1 = ((2.0 * mx * my + c1) / (mx * mx + my * my + c1)).powf(0.6);
        let expected = cs0 * l1;
        assert!((mssim_plane(&x, &y, &params).unwrap() - expected).abs() < 1e-12);
    }
}
