//! Pixel-intensity histograms and fitted probability densities.
//!
//! Bins follow the Freedman–Diaconis rule, `h = 2·IQR·n^(−1/3)`. Integer
//! data gets an integer bin width with half-integer edges so every bin holds
//! whole count values. Fits minimize `Σ (O − E)² / max(O, 1)` over all bins.

use std::fmt;
use std::str::FromStr;

use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

use super::simplex::{minimize, SimplexOptions};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::stats;

const MAX_BINS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdfModel {
    /// Counts on the integers, mean λ.
    Poisson,
    Gaussian,
    SkewGaussian,
    /// Poisson counts on a support scaled by `s`, smeared by a Gaussian of width `w`.
    PoissonConvGaussian,
}

impl PdfModel {
    pub const ALL: [PdfModel; 4] = [PdfModel::Poisson, PdfModel::Gaussian, PdfModel::SkewGaussian, PdfModel::PoissonConvGaussian];

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            PdfModel::Poisson => &["lambda"],
            PdfModel::Gaussian => &["mu", "sigma"],
            PdfModel::SkewGaussian => &["mu", "omega", "alpha"],
            PdfModel::PoissonConvGaussian => &["lambda", "scale", "width"],
        }
    }
}

impl fmt::Display for PdfModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PdfModel::Poisson => "poisson",
            PdfModel::Gaussian => "gaussian",
            PdfModel::SkewGaussian => "skew_gaussian",
            PdfModel::PoissonConvGaussian => "poisson_conv_gaussian",
        })
    }
}

impl FromStr for PdfModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PdfModel::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown pdf model {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub total: f64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }
}

fn is_integer_data(values: &[f64]) -> bool {
    values.iter().all(|v| v.fract() == 0.0)
}

/// Freedman–Diaconis histogram of `values`.
pub fn histogram(values: &[f64]) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty histogram: no values".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, value: values[i] });
    }
    let n = values.len() as f64;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let iqr = stats::quantile(values, 0.75).unwrap() - stats::quantile(values, 0.25).unwrap();
    let mut width = 2.0 * iqr / n.cbrt();
    let (start, nbins) = if is_integer_data(values) {
        let mut w = width.round().max(1.0);
        while ((hi - lo + 1.0) / w).ceil() as usize > MAX_BINS {
            w *= 2.0;
        }
        width = w;
        (lo - 0.5, (((hi - lo + 1.0) / w).ceil() as usize).max(1))
    } else {
        if !(width > 0.0) {
            width = if hi > lo { (hi - lo) / n.sqrt().ceil() } else { lo.abs().max(1.0) * 1e-6 };
        }
        width = width.max((hi - lo) / MAX_BINS as f64);
        let k = (((hi - lo) / width).ceil() as usize).max(1);
        (if hi > lo { lo } else { lo - 0.5 * width }, k)
    };
    let edges: Vec<f64> = (0..=nbins).map(|i| start + width * i as f64).collect();
    let mut counts = vec![0.0; nbins];
    for &v in values {
        let b = (((v - start) / width).floor() as isize).clamp(0, nbins as isize - 1) as usize;
        counts[b] += 1.0;
    }
    Ok(Histogram { edges, counts, total: n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdfFit {
    pub model: PdfModel,
    /// In the order of [`PdfModel::param_names`].
    pub params: Vec<f64>,
    pub chi2: f64,
    /// `χ² / (bins − parameters)`.
    pub reduced_chi2: f64,
    /// Probability mass of the fitted model over its whole support.
    pub mass: f64,
    pub converged: bool,
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn ln_poisson_pmf(k: f64, lambda: f64) -> f64 {
    k * lambda.ln() - lambda - ln_gamma(k + 1.0)
}

/// Integer range carrying all but a negligible tail of Poisson(λ).
fn poisson_support(lambda: f64) -> (u64, u64) {
    let spread = 12.0 * lambda.sqrt() + 12.0;
    ((lambda - spread).floor().max(0.0) as u64, (lambda + spread).ceil() as u64)
}

fn skew_density(v: f64, mu: f64, omega: f64, alpha: f64) -> f64 {
    let z = (v - mu) / omega;
    2.0 / omega * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * norm_cdf(alpha * z)
}

/// `(mean, standard deviation, skewness)` of a skew-normal density.
pub fn skew_normal_moments(mu: f64, omega: f64, alpha: f64) -> (f64, f64, f64) {
    let d = alpha / (1.0 + alpha * alpha).sqrt();
    let b = d * (2.0 / std::f64::consts::PI).sqrt();
    let var = 1.0 - b * b;
    let skew = (4.0 - std::f64::consts::PI) / 2.0 * b.powi(3) / var.powf(1.5);
    (mu + omega * b, omega * var.sqrt(), skew)
}

/// Composite Simpson's rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Model probability of `[lo, hi)`. Positive parameters enter through their absolute values.
fn bin_probability(model: PdfModel, p: &[f64], lo: f64, hi: f64) -> f64 {
    match model {
        PdfModel::Poisson => {
            let lambda = p[0].abs();
            let (k0, k1) = poisson_support(lambda);
            // unit cells [k − ½, k + ½)
            let first = (lo + 0.5).floor().max(k0 as f64) as u64;
            let last = ((hi + 0.5).ceil() - 1.0).min(k1 as f64);
            if last < first as f64 {
                return 0.0;
            }
            (first..=last as u64)
                .map(|k| {
                    let k = k as f64;
                    let overlap = (hi.min(k + 0.5) - lo.max(k - 0.5)).max(0.0);
                    overlap * ln_poisson_pmf(k, lambda).exp()
                })
                .sum()
        }
        PdfModel::Gaussian => {
            let (mu, s) = (p[0], p[1].abs());
            norm_cdf((hi - mu) / s) - norm_cdf((lo - mu) / s)
        }
        PdfModel::SkewGaussian => {
            let (mu, omega, alpha) = (p[0], p[1].abs(), p[2]);
            let panels = (2 * ((hi - lo) / omega * 8.0).ceil() as usize).clamp(8, 512);
            simpson(|v| skew_density(v, mu, omega, alpha), lo, hi, panels)
        }
        PdfModel::PoissonConvGaussian => {
            let (lambda, scale, width) = (p[0].abs(), p[1].abs(), p[2].abs());
            let (k0, k1) = poisson_support(lambda);
            (k0..=k1)
                .map(|k| {
                    let c = scale * k as f64;
                    ln_poisson_pmf(k as f64, lambda).exp() * (norm_cdf((hi - c) / width) - norm_cdf((lo - c) / width))
                })
                .sum()
        }
    }
}

/// Expected bin counts of `model` with `params` for a histogram.
pub fn expected_counts(model: PdfModel, params: &[f64], hist: &Histogram) -> Vec<f64> {
    hist.edges.windows(2).map(|e| hist.total * bin_probability(model, params, e[0], e[1])).collect()
}

fn positive_indices(model: PdfModel) -> &'static [usize] {
    match model {
        PdfModel::Poisson => &[0],
        PdfModel::Gaussian | PdfModel::SkewGaussian => &[1],
        PdfModel::PoissonConvGaussian => &[0, 1, 2],
    }
}

fn chi2(model: PdfModel, params: &[f64], hist: &Histogram) -> f64 {
    if positive_indices(model).iter().any(|&i| params[i] == 0.0) {
        return f64::INFINITY;
    }
    expected_counts(model, params, hist).iter().zip(&hist.counts).map(|(e, o)| (o - e).powi(2) / o.max(1.0)).sum()
}

fn total_mass(model: PdfModel, p: &[f64]) -> f64 {
    match model {
        PdfModel::Poisson => {
            let (k0, k1) = poisson_support(p[0].abs());
            bin_probability(model, p, k0 as f64 - 0.5, k1 as f64 + 0.5)
        }
        PdfModel::Gaussian => 1.0,
        PdfModel::SkewGaussian => {
            let (mu, omega) = (p[0], p[1].abs());
            simpson(|v| skew_density(v, mu, omega, p[2]), mu - 12.0 * omega, mu + 12.0 * omega, 4096)
        }
        PdfModel::PoissonConvGaussian => {
            let (k0, k1) = poisson_support(p[0].abs());
            let (s, w) = (p[1].abs(), p[2].abs());
            bin_probability(model, p, s * k0 as f64 - 12.0 * w, s * k1 as f64 + 12.0 * w)
        }
    }
}

fn initial_guess(model: PdfModel, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = stats::mean(values);
    let var = stats::variance(values);
    let sd = var.sqrt().max(1e-9 * m.abs().max(1.0));
    match model {
        PdfModel::Poisson => {
            let l = m.max(0.5);
            (vec![l], vec![0.1 * l])
        }
        PdfModel::Gaussian => (vec![m, sd], vec![0.2 * sd, 0.2 * sd]),
        PdfModel::SkewGaussian => (vec![m, sd, 0.0], vec![0.2 * sd, 0.2 * sd, 1.0]),
        PdfModel::PoissonConvGaussian => {
            // moments: mean = sλ, var = s²λ + w²; start with most variance from counting
            let s = if m > 0.0 { (0.8 * var / m).clamp(1e-9, 1.0) } else { sd };
            let l = (m / s).max(0.5);
            let w = (var - s * s * l).max(0.04 * var).sqrt().max(1e-9);
            (vec![l, s, w], vec![0.1 * l, 0.1 * s, 0.2 * w])
        }
    }
}

/// Fits `model` to the histogram of `values`.
pub fn fit_pdf_values(values: &[f64], model: PdfModel) -> Result<(PdfFit, Histogram)> {
    let hist = histogram(values)?;
    let (x0, steps) = initial_guess(model, values);
    let res = minimize(|p| chi2(model, p, &hist), &x0, &steps, &SimplexOptions::default());
    let mut params = res.x.clone();
    for &i in positive_indices(model) {
        params[i] = params[i].abs();
    }
    let dof = hist.bins().saturating_sub(params.len()).max(1) as f64;
    let fit = PdfFit {
        model,
        mass: total_mass(model, &params),
        params,
        chi2: res.value,
        reduced_chi2: res.value / dof,
        converged: res.converged && res.value.is_finite(),
    };
    Ok((fit, hist))
}

/// Fits `model` to the live pixels of `frame`.
pub fn fit_pdf(frame: &Frame, model: PdfModel) -> Result<PdfFit> {
    let values: Vec<f64> = frame.live_values().map(f64::from).collect();
    Ok(fit_pdf_values(&values, model)?.0)
}

/// Writes `model,param,value,...` rows plus goodness of fit.
pub fn write_pdf_csv<W: std::io::Write>(fits: &[(String, PdfFit)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "model", "parameters", "reduced_chi2", "mass", "converged"])?;
    for (id, f) in fits {
        let params = f
            .model
            .param_names()
            .iter()
            .zip(&f.params)
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            id.clone(),
            f.model.to_string(),
            params,
            f.reduced_chi2.to_string(),
            f.mass.to_string(),
            f.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `lower,upper,observed,expected` for one fit.
pub fn write_histogram_csv<W: std::io::Write>(hist: &Histogram, fit: &PdfFit, out: W) -> Result<()> {
    let expected = expected_counts(fit.model, &fit.params, hist);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lower", "upper", "observed", "expected"])?;
    for (i, e) in expected.iter().enumerate() {
        w.write_record([hist.edges[i].to_string(), hist.edges[i + 1].to_string(), hist.counts[i].to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_poisson;
    use crate::rng::rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn integer_bins_have_half_integer_edges() {
        let v: Vec<f64> = (0..1000).map(|i| (i % 17) as f64).collect();
        let h = histogram(&v).unwrap();
        assert_eq!(h.edges[0], -0.5);
        assert!(h.edges.iter().all(|e| (e - 0.5).fract() == 0.0));
        assert_eq!(h.counts.iter().sum::<f64>(), 1000.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(histogram(&[]).is_err());
        let f = Frame::filled(2, 2, 1.0).with_dead_mask(vec![true; 4]).unwrap();
        assert!(fit_pdf(&f, PdfModel::Gaussian).is_err());
    }

    #[test]
    fn poisson_mean_is_recovered() {
        let mut r = rng(3);
        let v: Vec<f64> = (0..1_000_000).map(|_| sample_poisson(20.0, &mut r)).collect();
        let (f, _) = fit_pdf_values(&v, PdfModel::Poisson).unwrap();
        assert!((f.params[0] - 20.0).abs() < 0.2, "{:?}", f.params);
        assert!((f.mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn symmetric_data_gives_a_symmetric_fit() {
        // α itself converges only at n^(-1/6) near zero, so the check is on
        // the implied moments: skewness within 3 standard errors of zero
        let mut r = rng(4);
        let n = Normal::new(5.0, 2.0).unwrap();
        let v: Vec<f64> = (0..100_000).map(|_| n.sample(&mut r)).collect();
        let (f, _) = fit_pdf_values(&v, PdfModel::SkewGaussian).unwrap();
        let (mean, sd, skew) = skew_normal_moments(f.params[0], f.params[1], f.params[2]);
        assert!(skew.abs() < 3.0 * (6.0 / 100_000f64).sqrt(), "{:?}", f.params);
        assert!((mean - 5.0).abs() < 0.05 && (sd - 2.0).abs() < 0.05);
        assert!((f.mass - 1.0).abs() < 1e-3);
        let (g, _) = fit_pdf_values(&v, PdfModel::Gaussian).unwrap();
        assert!((g.params[0] - 5.0).abs() < 0.05 && (g.params[1] - 2.0).abs() < 0.05);
        assert_eq!(skew_normal_moments(1.0, 2.0, 0.0), (1.0, 2.0, 0.0));
    }

    #[test]
    fn skewed_data_is_detected() {
        let mut r = rng(5);
        // skew-normal draws: δ|z0| + √(1−δ²) z1
        let alpha: f64 = 4.0;
        let d = alpha / (1.0 + alpha * alpha).sqrt();
        let n = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..100_000)
            .map(|_| {
                let (z0, z1): (f64, f64) = (n.sample(&mut r), n.sample(&mut r));
                10.0 + 3.0 * (d * z0.abs() + (1.0 - d * d).sqrt() * z1)
            })
            .collect();
        let (f, _) = fit_pdf_values(&v, PdfModel::SkewGaussian).unwrap();
        assert!((f.params[2] - alpha).abs() < 0.5, "{:?}", f.params);
        let (g, _) = fit_pdf_values(&v, PdfModel::Gaussian).unwrap();
        assert!(f.reduced_chi2 < g.reduced_chi2);
    }

    #[test]
    fn conv_model_masses_are_one() {
        for p in [[20.0, 1.0, 0.7], [3.0, 0.5, 0.1], [80.0, 0.02, 0.3]] {
            assert!((total_mass(PdfModel::PoissonConvGaussian, &p) - 1.0).abs() < 1e-6);
        }
        assert!((total_mass(PdfModel::SkewGaussian, &[0.0, 2.0, -3.0]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn smeared_counts_prefer_the_conv_model() {
        let mut r = rng(6);
        let v: Vec<f64> = (0..20_000).map(|_| sample_poisson(12.0, &mut r) * 0.6 + r.random_range(-0.4..0.4)).collect();
        let (p, _) = fit_pdf_values(&v, PdfModel::Poisson).unwrap();
        let (c, _) = fit_pdf_values(&v, PdfModel::PoissonConvGaussian).unwrap();
        assert!(c.reduced_chi2 < p.reduced_chi2);
        assert!((c.params[0] * c.params[1] - 7.2).abs() < 0.2, "{:?}", c.params);
    }

    #[test]
    fn model_names_round_trip() {
        for m in PdfModel::ALL {
            assert_eq!(m.to_string().parse::<PdfModel>().unwrap(), m);
        }
    }
}
