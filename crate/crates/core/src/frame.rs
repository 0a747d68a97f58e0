//! Detector frames, frame pairs, per-frame normalization and augmentation.

use std::fmt;

use crate::error::{Error, Result};

/// Reciprocal-space axis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisLabel {
    H,
    K,
    L,
}

impl AxisLabel {
    pub fn as_byte(self) -> u8 {
        match self {
            AxisLabel::H => b'h',
            AxisLabel::K => b'k',
            AxisLabel::L => b'l',
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            b'h' | b'H' => Some(AxisLabel::H),
            b'k' | b'K' => Some(AxisLabel::K),
            b'l' | b'L' => Some(AxisLabel::L),
            _ => None,
        }
    }

    /// Position of this axis inside an `(h, k, l)` triple.
    pub fn index(self) -> usize {
        match self {
            AxisLabel::H => 0,
            AxisLabel::K => 1,
            AxisLabel::L => 2,
        }
    }
}

impl fmt::Display for AxisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_byte() as char)
    }
}

impl std::str::FromStr for AxisLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.as_bytes() {
            [b] => AxisLabel::from_byte(*b),
            _ => None,
        }
        .ok_or_else(|| Error::InvalidArgument(format!("unknown axis {s:?}, expected h, k or l")))
    }
}

/// A linear pixel-to-reciprocal-space mapping: `coord(i) = origin + i * step` (r.l.u.).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub label: AxisLabel,
    pub origin: f64,
    pub step: f64,
}

impl AxisSpec {
    pub fn new(label: AxisLabel, origin: f64, step: f64) -> Self {
        Self { label, origin, step }
    }

    pub fn coord(&self, index: f64) -> f64 {
        self.origin + index * self.step
    }

    /// Fractional index of a coordinate.
    pub fn index_of(&self, coord: f64) -> f64 {
        (coord - self.origin) / self.step
    }

    /// The same coordinates traversed in the opposite direction over `len` samples.
    pub fn reversed(&self, len: usize) -> Self {
        Self {
            label: self.label,
            origin: self.coord(len.saturating_sub(1) as f64),
            step: -self.step,
        }
    }
}

/// Reciprocal coordinates of a frame: vertical (row) axis, horizontal
/// (column) axis and optionally the axis along which a stack of frames is
/// recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReciprocalAxes {
    pub rows: AxisSpec,
    pub cols: AxisSpec,
    pub stack: Option<AxisSpec>,
}

impl ReciprocalAxes {
    pub fn new(rows: AxisSpec, cols: AxisSpec, stack: Option<AxisSpec>) -> Result<Self> {
        let axes = Self { rows, cols, stack };
        axes.validate()?;
        Ok(axes)
    }

    pub fn validate(&self) -> Result<()> {
        let mut all = vec![self.rows, self.cols];
        all.extend(self.stack);
        for a in &all {
            if a.step == 0.0 || !a.step.is_finite() || !a.origin.is_finite() {
                return Err(Error::InvalidFrame(format!("axis {} has invalid origin/step", a.label)));
            }
        }
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if all[i].label == all[j].label {
                    return Err(Error::InvalidFrame(format!("axis label {} used twice", all[i].label)));
                }
            }
        }
        Ok(())
    }
}

/// One 2D detector exposure. Intensities are row-major; dead pixels are
/// flagged in `dead_mask` and always hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
    dead: Vec<bool>,
    axes: Option<ReciprocalAxes>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidFrame(format!(
                "{} values for a {height}x{width} frame",
                data.len()
            )));
        }
        if let Some((index, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value: *v as f64 });
        }
        Ok(Self { height, width, dead: vec![false; data.len()], data, axes: None })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(value.is_finite());
        Self {
            height,
            width,
            data: vec![value; height * width],
            dead: vec![false; height * width],
            axes: None,
        }
    }

    /// Builds a frame from `f(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    /// Attaches a dead-pixel mask and zeroes the flagged pixels.
    pub fn with_dead_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dead mask of {} entries for {} pixels",
                mask.len(),
                self.data.len()
            )));
        }
        for (v, &d) in self.data.iter_mut().zip(&mask) {
            if d {
                *v = 0.0;
            }
        }
        self.dead = mask;
        Ok(self)
    }

    pub fn with_axes(mut self, axes: ReciprocalAxes) -> Result<Self> {
        axes.validate()?;
        self.axes = Some(axes);
        Ok(self)
    }

    pub fn without_axes(mut self) -> Self {
        self.axes = None;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn dead_mask(&self) -> &[bool] {
        &self.dead
    }

    pub fn has_dead_pixels(&self) -> bool {
        self.dead.iter().any(|&d| d)
    }

    pub fn axes(&self) -> Option<&ReciprocalAxes> {
        self.axes.as_ref()
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Returns a frame with the same geometry, mask and axes but new values.
    /// Dead pixels are forced back to zero.
    pub fn map_values(&self, data: Vec<f32>) -> Result<Frame> {
        if data.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {} pixels", data.len(), self.data.len())));
        }
        let mut out = Frame::new(self.height, self.width, data)?;
        for (v, &d) in out.data.iter_mut().zip(&self.dead) {
            if d {
                *v = 0.0;
            }
        }
        out.dead = self.dead.clone();
        out.axes = self.axes;
        Ok(out)
    }

    /// Sum of all intensities (f64 accumulation).
    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn live_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().zip(&self.dead).filter(|(_, &d)| !d).map(|(&v, _)| v)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Fails if any pixel is negative.
    pub fn check_non_negative(&self) -> Result<()> {
        match self.data.iter().position(|&v| v < 0.0) {
            Some(index) => Err(Error::NegativeIntensity { index, value: self.data[index] as f64 }),
            None => Ok(()),
        }
    }

    /// Reverses the row order; axes are re-expressed so each pixel keeps its coordinate.
    pub fn flip_rows(&self) -> Frame {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(self.data.len());
        let mut dead = Vec::with_capacity(self.data.len());
        for r in (0..h).rev() {
            data.extend_from_slice(&self.data[r * w..(r + 1) * w]);
            dead.extend_from_slice(&self.dead[r * w..(r + 1) * w]);
        }
        let axes = self.axes.map(|a| ReciprocalAxes { rows: a.rows.reversed(h), ..a });
        Frame { height: h, width: w, data, dead, axes }
    }

    /// Reverses the column order; axes are re-expressed so each pixel keeps its coordinate.
    pub fn flip_cols(&self) -> Frame {
        let (h, w) = (self.height, self.width);
        let mut data = self.data.clone();
        let mut dead = self.dead.clone();
        for r in 0..h {
            data[r * w..(r + 1) * w].reverse();
            dead[r * w..(r + 1) * w].reverse();
        }
        let axes = self.axes.map(|a| ReciprocalAxes { cols: a.cols.reversed(w), ..a });
        Frame { height: h, width: w, data, dead, axes }
    }
}

/// An aligned (low-count, high-count) pair of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub lc: Frame,
    pub hc: Frame,
    pub pair_id: String,
}

impl FramePair {
    pub fn new(lc: Frame, hc: Frame, pair_id: impl Into<String>) -> Result<Self> {
        let pair_id = pair_id.into();
        if !lc.same_shape(&hc) {
            return Err(Error::ShapeMismatch(format!(
                "pair {pair_id}: lc {}x{} vs hc {}x{}",
                lc.height, lc.width, hc.height, hc.width
            )));
        }
        if lc.dead != hc.dead {
            return Err(Error::InvalidFrame(format!("pair {pair_id}: dead masks differ")));
        }
        if lc.axes != hc.axes {
            return Err(Error::InvalidFrame(format!("pair {pair_id}: axes differ")));
        }
        Ok(Self { lc, hc, pair_id })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationScheme {
    /// Per-frame min-max over live pixels.
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub min: f64,
    pub max: f64,
    pub scheme: NormalizationScheme,
}

impl NormalizationRecord {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Maps a normalized value back to the original units.
    pub fn invert_value(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }

    /// Maps an original-unit value into normalized units.
    pub fn apply_value(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, frame: &Frame) -> Result<Frame> {
        let data = frame.data.iter().map(|&v| self.invert_value(v as f64) as f32).collect();
        frame.map_values(data)
    }

    pub fn apply(&self, frame: &Frame) -> Result<Frame> {
        let data = frame.data.iter().map(|&v| self.apply_value(v as f64) as f32).collect();
        frame.map_values(data)
    }
}

/// Min-max normalization to `[0, 1]` over live pixels. Dead pixels stay 0.
pub fn normalize_frame(frame: &Frame) -> Result<(Frame, NormalizationRecord)> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in frame.live_values() {
        min = min.min(v as f64);
        max = max.max(v as f64);
    }
    if !min.is_finite() {
        return Err(Error::InvalidFrame("no live pixels to normalize".into()));
    }
    if max <= min {
        return Err(Error::ConstantFrame { id: None, value: min });
    }
    let record = NormalizationRecord { min, max, scheme: NormalizationScheme::MinMax };
    Ok((record.apply(frame)?, record))
}

/// Flips both frames of a pair along the ℓ axis when `coin` is set.
///
/// The ℓ axis is taken from the frame axes; without axes (or without an
/// in-frame ℓ axis) the vertical axis is used.
pub fn augment_flip(pair: &FramePair, coin: bool) -> FramePair {
    if !coin {
        return pair.clone();
    }
    let flip = |f: &Frame| match f.axes {
        Some(a) if a.cols.label == AxisLabel::L => f.flip_cols(),
        _ => f.flip_rows(),
    };
    FramePair { lc: flip(&pair.lc), hc: flip(&pair.hc), pair_id: pair.pair_id.clone() }
}
