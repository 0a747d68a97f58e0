//! Gaussian peak fits, correlation lengths and DO/HC ratio reports.

use super::scan::ScanProjection;
use super::simplex::{minimize, SimplexOptions};
use crate::error::{Error, Result};
use crate::frame::AxisLabel;
use crate::lattice::{fwhm_factor, Lattice, XI_CONVENTION};

/// `A·exp(−(q−q₀)²/(2σ²)) + B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFit {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub offset: f64,
    /// One-sigma errors of `[A, q₀, σ, B]`; NaN where the curvature is singular.
    pub uncertainties: [f64; 4],
    pub converged: bool,
}

impl PeakFit {
    pub fn eval(&self, q: f64) -> f64 {
        gaussian(self.amplitude, self.center, self.sigma, self.offset, q)
    }

    fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged("peak fit".into()))
        }
    }
}

fn gaussian(a: f64, q0: f64, s: f64, b: f64, q: f64) -> f64 {
    a * (-0.5 * ((q - q0) / s).powi(2)).exp() + b
}

/// Fit runs on `q = qmin + span·u`, `v = vmin + range·y`, so every
/// parameter is of order one; `A` and `σ` enter through their absolute values.
struct Scaled<'a> {
    coords: &'a [f64],
    values: &'a [f64],
    qmin: f64,
    span: f64,
    vmin: f64,
    range: f64,
}

impl Scaled<'_> {
    fn physical(&self, p: &[f64]) -> [f64; 4] {
        [p[0].abs() * self.range, self.qmin + p[1] * self.span, p[2].abs() * self.span, self.vmin + p[3] * self.range]
    }

    /// Sum of squared residuals in scaled units.
    fn ssr(&self, p: &[f64]) -> f64 {
        let [a, q0, s, b] = self.physical(p);
        if s == 0.0 {
            return f64::INFINITY;
        }
        self.coords
            .iter()
            .zip(self.values)
            .map(|(&q, &v)| ((gaussian(a, q0, s, b, q) - v) / self.range).powi(2))
            .sum()
    }
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
fn invert(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let norm = m.iter().flatten().fold(0.0f64, |x, v| x.max(v.abs()));
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[piv][col].abs() > 1e-12 * norm) {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..4 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..4 {
            if i != col {
                let f = a[i][col];
                for j in 0..4 {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

/// Central-difference Hessian of `f` at `p`.
fn hessian(f: &impl Fn(&[f64]) -> f64, p: &[f64; 4]) -> [[f64; 4]; 4] {
    let h: Vec<f64> = p.iter().map(|v| 1e-4 * v.abs().max(1e-2)).collect();
    let at = |di: (usize, f64), dj: (usize, f64)| {
        let mut x = *p;
        x[di.0] += di.1;
        x[dj.0] += dj.1;
        f(&x)
    };
    let f0 = f(p);
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        out[i][i] = (at((i, h[i]), (i, 0.0)) - 2.0 * f0 + at((i, -h[i]), (i, 0.0))) / (h[i] * h[i]);
        for j in 0..i {
            let v = (at((i, h[i]), (j, h[j])) - at((i, h[i]), (j, -h[j])) - at((i, -h[i]), (j, h[j]))
                + at((i, -h[i]), (j, -h[j])))
                / (4.0 * h[i] * h[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Least-squares Gaussian-plus-constant fit by simplex search.
pub fn fit_gaussian_1d(coords: &[f64], values: &[f64]) -> Result<PeakFit> {
    let n = coords.len();
    if n != values.len() {
        return Err(Error::ShapeMismatch(format!("{n} coordinates but {} values", values.len())));
    }
    if n < 5 {
        return Err(Error::InvalidArgument(format!("a peak fit needs at least 5 points, got {n}")));
    }
    if let Some(i) = coords.iter().chain(values).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i % n, value: coords.iter().chain(values).nth(i).copied().unwrap() });
    }
    let qmin = coords.iter().cloned().fold(f64::INFINITY, f64::min);
    let qmax = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(qmax > qmin) {
        return Err(Error::InvalidArgument("scan coordinates have no spread".into()));
    }
    let range = if vmax > vmin { vmax - vmin } else { vmin.abs().max(1.0) };
    let sc = Scaled { coords, values, qmin, span: qmax - qmin, vmin, range };
    let imax = (0..n).max_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    let x0 = [(vmax - vmin) / range, (coords[imax] - qmin) / sc.span, 0.25, 0.0];
    let opts = SimplexOptions::default();
    let res = minimize(|p| sc.ssr(p), &x0, &[0.1, 0.05, 0.05, 0.1], &opts);
    let [amplitude, center, sigma, offset] = sc.physical(&res.x);

    let p: [f64; 4] = res.x.clone().try_into().unwrap();
    let dof = n.saturating_sub(4).max(1) as f64;
    let s2 = res.value / dof;
    let jac = [range, sc.span, sc.span, range];
    let uncertainties = match invert(&hessian(&|x: &[f64]| sc.ssr(x), &p)) {
        Some(inv) => std::array::from_fn(|i| {
            let var = 2.0 * s2 * inv[i][i];
            if var >= 0.0 { var.sqrt() * jac[i] } else { f64::NAN }
        }),
        None => [f64::NAN; 4],
    };
    let converged = res.converged && sigma > 0.0 && amplitude.is_finite() && res.value.is_finite();
    Ok(PeakFit { amplitude, center, sigma, offset, uncertainties, converged })
}

pub fn fit_scan(scan: &ScanProjection) -> Result<PeakFit> {
    fit_gaussian_1d(&scan.coords, &scan.intensities)
}

/// A value with its one-sigma error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub value: f64,
    pub error: f64,
}

impl Measured {
    /// `self / other`, relative errors added in quadrature.
    pub fn ratio(self, other: Measured) -> Measured {
        let value = self.value / other.value;
        let rel = ((self.error / self.value).powi(2) + (other.error / other.value).powi(2)).sqrt();
        Measured { value, error: value.abs() * rel }
    }
}

/// ξ in Å from the fitted width along `axis`.
pub fn correlation_length(fit: &PeakFit, axis: AxisLabel, lattice: &Lattice) -> Result<Measured> {
    fit.require_converged()?;
    let a = lattice.constant(axis);
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("lattice constant {a} must be positive")));
    }
    let xi = lattice.correlation_length(axis, fit.sigma);
    Ok(Measured { value: xi, error: xi * fit.uncertainties[2] / fit.sigma })
}

/// `w = A · FWHM`.
pub fn integrated_intensity(fit: &PeakFit) -> Result<Measured> {
    fit.require_converged()?;
    let w = fit.amplitude * fwhm_factor() * fit.sigma;
    let rel = ((fit.uncertainties[0] / fit.amplitude).powi(2) + (fit.uncertainties[2] / fit.sigma).powi(2)).sqrt();
    Ok(Measured { value: w, error: w.abs() * rel })
}

/// Fits of the three scans through one peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisFits {
    pub h: PeakFit,
    pub k: PeakFit,
    pub l: PeakFit,
}

/// ξ_a from h, ξ_c from ℓ, and `w_b` from k, where the peak is resolution limited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakQuantities {
    pub xi_a: Option<Measured>,
    pub xi_c: Option<Measured>,
    pub w_b: Option<Measured>,
}

impl PeakQuantities {
    pub fn from_fits(fits: &AxisFits, lattice: &Lattice) -> Self {
        Self {
            xi_a: correlation_length(&fits.h, AxisLabel::H, lattice).ok(),
            xi_c: correlation_length(&fits.l, AxisLabel::L, lattice).ok(),
            w_b: integrated_intensity(&fits.k).ok(),
        }
    }

    /// Mean over runs; the error is the standard deviation of the runs.
    /// A quantity missing from any run is missing from the mean.
    pub fn ensemble_mean(runs: &[PeakQuantities]) -> Self {
        let mean = |get: fn(&PeakQuantities) -> Option<Measured>| -> Option<Measured> {
            let v: Option<Vec<f64>> = runs.iter().map(|r| get(r).map(|m| m.value)).collect();
            let v = v.filter(|v| !v.is_empty())?;
            let m = crate::stats::mean(&v);
            Some(Measured { value: m, error: crate::stats::variance(&v).sqrt() })
        };
        Self { xi_a: mean(|r| r.xi_a), xi_c: mean(|r| r.xi_c), w_b: mean(|r| r.w_b) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub high_count: PeakQuantities,
    pub denoised: PeakQuantities,
    pub xi_a_ratio: Option<Measured>,
    pub xi_c_ratio: Option<Measured>,
    pub w_b_ratio: Option<Measured>,
    pub convention: &'static str,
}

pub fn ratio_report(high_count: PeakQuantities, denoised: PeakQuantities) -> CorrelationReport {
    let ratio = |d: Option<Measured>, h: Option<Measured>| match (d, h) {
        (Some(d), Some(h)) if h.value != 0.0 => Some(d.ratio(h)),
        _ => None,
    };
    CorrelationReport {
        xi_a_ratio: ratio(denoised.xi_a, high_count.xi_a),
        xi_c_ratio: ratio(denoised.xi_c, high_count.xi_c),
        w_b_ratio: ratio(denoised.w_b, high_count.w_b),
        high_count,
        denoised,
        convention: XI_CONVENTION,
    }
}

/// One row per quantity; absent values are empty fields.
pub fn write_report_csv<W: std::io::Write>(report: &CorrelationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "high_count", "high_count_error", "denoised", "denoised_error", "ratio", "ratio_error", "convention"])?;
    let cells = |m: Option<Measured>| match m {
        Some(m) => [m.value.to_string(), m.error.to_string()],
        None => [String::new(), String::new()],
    };
    let rows = [
        ("xi_a", report.high_count.xi_a, report.denoised.xi_a, report.xi_a_ratio),
        ("xi_c", report.high_count.xi_c, report.denoised.xi_c, report.xi_c_ratio),
        ("w_b", report.high_count.w_b, report.denoised.w_b, report.w_b_ratio),
    ];
    for (name, h, d, r) in rows {
        let [hv, he] = cells(h);
        let [dv, de] = cells(d);
        let [rv, re] = cells(r);
        w.write_record([name.to_string(), hv, he, dv, de, rv, re, report.convention.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `axis,amplitude,center,sigma,offset,...errors,converged`.
pub fn write_fits_csv<W: std::io::Write>(fits: &[(AxisLabel, PeakFit)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "axis",
        "amplitude",
        "center",
        "sigma",
        "offset",
        "amplitude_error",
        "center_error",
        "sigma_error",
        "offset_error",
        "converged",
    ])?;
    for (axis, f) in fits {
        let mut rec = vec![axis.to_string()];
        rec.extend([f.amplitude, f.center, f.sigma, f.offset].iter().chain(&f.uncertainties).map(|v| v.to_string()));
        rec.push(f.converged.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
