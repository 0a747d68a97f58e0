//! Summaries of per-pair evaluation rows.
//!
//! PSNR is summarized by the centre of a Gaussian fitted to its histogram;
//! MSSIM and quality by their medians.

use super::pdf::{histogram, Histogram};
use super::simplex::{minimize, SimplexOptions};
use crate::error::{Error, Result};
use crate::experiment::EvalRow;
use crate::stats::{self, median};

/// Fewer rows than this skip the histogram fit.
pub const MIN_ROWS_FOR_FIT: usize = 10;

/// `amplitude·exp(−(x−μ)²/(2σ²))` fitted to histogram counts at bin centres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramFit {
    pub amplitude: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl HistogramFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (-0.5 * ((x - self.mu) / self.sigma).powi(2)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub n: usize,
    /// Fitted μ, or the median when `psnr_fallback` is set.
    pub psnr: f64,
    pub psnr_median: f64,
    pub psnr_fallback: bool,
    pub psnr_fit: Option<HistogramFit>,
    pub psnr_histogram: Histogram,
    pub mssim_median: f64,
    pub quality_median: f64,
}

fn fit_histogram(hist: &Histogram, values: &[f64]) -> Option<HistogramFit> {
    if hist.bins() < 3 {
        return None;
    }
    let centers: Vec<f64> = hist.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
    let peak = hist.counts.iter().cloned().fold(0.0, f64::max);
    let sd = stats::variance(values).sqrt();
    let m = stats::mean(values);
    let ssr = |p: &[f64]| -> f64 {
        let f = HistogramFit { amplitude: p[0], mu: p[1], sigma: p[2].abs() };
        if f.sigma == 0.0 {
            return f64::INFINITY;
        }
        centers.iter().zip(&hist.counts).map(|(x, c)| (f.eval(*x) - c).powi(2)).sum()
    };
    let res = minimize(ssr, &[peak, m, sd], &[0.1 * peak, 0.2 * sd, 0.2 * sd], &SimplexOptions::default());
    let fit = HistogramFit { amplitude: res.x[0], mu: res.x[1], sigma: res.x[2].abs() };
    let (lo, hi) = (hist.edges[0], hist.edges[hist.bins()]);
    (res.converged && fit.amplitude > 0.0 && fit.mu >= lo && fit.mu <= hi).then_some(fit)
}

/// Summary of one column set; errors only on empty input.
pub fn summarize(psnr: &[f64], mssim: &[f64], quality: &[f64]) -> Result<ScoreSummary> {
    if psnr.is_empty() {
        return Err(Error::InvalidArgument("no rows to summarize".into()));
    }
    let psnr_median = median(psnr).unwrap();
    let psnr_histogram = histogram(psnr)?;
    let psnr_fit = if psnr.len() >= MIN_ROWS_FOR_FIT { fit_histogram(&psnr_histogram, psnr) } else { None };
    Ok(ScoreSummary {
        n: psnr.len(),
        psnr: psnr_fit.map_or(psnr_median, |f| f.mu),
        psnr_median,
        psnr_fallback: psnr_fit.is_none(),
        psnr_fit,
        psnr_histogram,
        mssim_median: median(mssim).unwrap_or(f64::NAN),
        quality_median: median(quality).unwrap_or(f64::NAN),
    })
}

/// `(noisy, denoised)` summaries of evaluation rows.
pub fn aggregate_scores(rows: &[EvalRow]) -> Result<(ScoreSummary, ScoreSummary)> {
    let col = |f: fn(&EvalRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let noisy = summarize(&col(|r| r.psnr_noisy), &col(|r| r.mssim_noisy), &col(|r| r.quality_noisy))?;
    let denoised = summarize(&col(|r| r.psnr_denoised), &col(|r| r.mssim_denoised), &col(|r| r.quality_denoised))?;
    Ok((noisy, denoised))
}

/// Writes `lower,upper,count,fitted` for the PSNR histogram.
pub fn write_psnr_histogram_csv<W: std::io::Write>(s: &ScoreSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lower", "upper", "count", "fitted"])?;
    let h = &s.psnr_histogram;
    for i in 0..h.bins() {
        let c = 0.5 * (h.edges[i] + h.edges[i + 1]);
        let fitted = s.psnr_fit.map_or(String::new(), |f| f.eval(c).to_string());
        w.write_record([h.edges[i].to_string(), h.edges[i + 1].to_string(), h.counts[i].to_string(), fitted])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_rows() {
        let v = vec![31.5; 25];
        let s = summarize(&v, &vec![0.9; 25], &vec![0.8; 25]).unwrap();
        assert_eq!(s.psnr, 31.5);
        assert!(s.psnr_fallback);
        assert_eq!((s.mssim_median, s.quality_median), (0.9, 0.8));
    }

    #[test]
    fn gaussian_rows_recover_the_centre() {
        let mut r = rng(8);
        let n = Normal::new(33.0, 2.0).unwrap();
        let v: Vec<f64> = (0..1000).map(|_| n.sample(&mut r)).collect();
        let s = summarize(&v, &v, &v).unwrap();
        assert!(!s.psnr_fallback);
        assert!((s.psnr - 33.0).abs() < 0.1, "{}", s.psnr);
        assert!((s.psnr_fit.unwrap().sigma - 2.0).abs() < 0.3);
    }

    #[test]
    fn few_rows_fall_back_to_median() {
        let s = summarize(&[30.0, 31.0, 35.0], &[0.1, 0.2, 0.3], &[0.0; 3]).unwrap();
        assert!(s.psnr_fallback);
        assert_eq!(s.psnr, 31.0);
    }

    #[test]
    fn medians_ignore_row_order() {
        let mut r = rng(9);
        let n = Normal::new(0.8, 0.05).unwrap();
        let mut v: Vec<f64> = (0..101).map(|_| n.sample(&mut r)).collect();
        let a = summarize(&v, &v, &v).unwrap();
        v.shuffle(&mut r);
        let b = summarize(&v, &v, &v).unwrap();
        assert_eq!((a.mssim_median, a.quality_median, a.psnr_median), (b.mssim_median, b.quality_median, b.psnr_median));
    }

    #[test]
    fn empty_rows_are_an_error() {
        assert!(aggregate_scores(&[]).is_err());
    }
}
