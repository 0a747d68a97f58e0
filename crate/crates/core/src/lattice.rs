//! Lattice constants and the width ↔ correlation-length convention.
//!
//! A correlation length is the inverse half width at half maximum of a
//! Gaussian peak, in Å⁻¹: `ξ = 1 / (σ_q · √(2 ln 2) · 2π / a)` with `σ_q`
//! in r.l.u. and `a` the lattice constant along the scan axis.

use crate::frame::AxisLabel;

pub const XI_CONVENTION: &str = "xi = 1/HWHM, HWHM = sigma*sqrt(2 ln 2)*2*pi/a [1/Angstrom]";

/// `2√(2 ln 2)`: FWHM of a Gaussian in units of its standard deviation.
pub fn fwhm_factor() -> f64 {
    2.0 * (2.0 * std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for Lattice {
    /// Tetragonal cuprate setting: `a = b = 5.32/√2 Å`, `c = 13.2 Å`.
    fn default() -> Self {
        let a = 5.32 / std::f64::consts::SQRT_2;
        Self { a, b: a, c: 13.2 }
    }
}

impl Lattice {
    pub fn constant(&self, axis: AxisLabel) -> f64 {
        match axis {
            AxisLabel::H => self.a,
            AxisLabel::K => self.b,
            AxisLabel::L => self.c,
        }
    }

    /// Converts a width in r.l.u. to Å⁻¹.
    pub fn to_inverse_angstrom(&self, axis: AxisLabel, rlu: f64) -> f64 {
        rlu * 2.0 * std::f64::consts::PI / self.constant(axis)
    }

    pub fn correlation_length(&self, axis: AxisLabel, sigma_rlu: f64) -> f64 {
        let hwhm = self.to_inverse_angstrom(axis, sigma_rlu) * fwhm_factor() / 2.0;
        1.0 / hwhm
    }

    /// Gaussian σ (r.l.u.) that yields correlation length `xi` (Å).
    pub fn sigma_for_correlation_length(&self, axis: AxisLabel, xi: f64) -> f64 {
        let hwhm = 1.0 / xi;
        hwhm / (fwhm_factor() / 2.0) * self.constant(axis) / (2.0 * std::f64::consts::PI)
    }
}
