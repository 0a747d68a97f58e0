//! One-dimensional projected scans through a frame stack.

use crate::error::{Error, Result};
use crate::frame::{AxisLabel, AxisSpec, Frame, ReciprocalAxes};

#[derive(Debug, Clone, PartialEq)]
pub struct ScanProjection {
    pub axis: AxisLabel,
    /// Scan coordinates in r.l.u., strictly monotone.
    pub coords: Vec<f64>,
    pub intensities: Vec<f64>,
    /// Counting-statistics error of each mean, `√(Σ counts) / n`.
    pub errors: Vec<f64>,
    /// Transverse half-widths (r.l.u.) indexed by axis label; the scan axis entry is unused.
    pub window: [f64; 3],
    /// `(intercept, slope)` removed by [`subtract_background`].
    pub background: Option<(f64, f64)>,
}

impl ScanProjection {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Indices whose coordinate lies within `half` of `center`; at least the nearest one.
fn window_indices(axis: &AxisSpec, n: usize, center: f64, half: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).filter(|&i| (axis.coord(i as f64) - center).abs() <= half * (1.0 + 1e-12)).collect();
    if idx.is_empty() {
        idx.push(axis.index_of(center).round().clamp(0.0, (n - 1) as f64) as usize);
    }
    idx
}

fn covers(axis: &AxisSpec, n: usize, q: f64) -> bool {
    let (a, b) = (axis.coord(0.0), axis.coord((n - 1) as f64));
    let (lo, hi) = (a.min(b), a.max(b));
    let pad = 0.5 * axis.step.abs();
    q >= lo - pad && q <= hi + pad
}

/// Mean intensity along `axis` through `q0`, averaged over the transverse
/// window. Frame `i` of the stack sits at stack coordinate `stack.coord(i)`.
pub fn project_scan(stack: &[Frame], q0: [f64; 3], axis: AxisLabel, window: [f64; 3]) -> Result<ScanProjection> {
    let first = stack.first().ok_or_else(|| Error::InvalidArgument("empty frame stack".into()))?;
    let axes: ReciprocalAxes = *first.axes().ok_or_else(|| Error::InvalidArgument("frames carry no axes metadata".into()))?;
    let stack_axis = axes.stack.ok_or_else(|| Error::InvalidArgument("frames carry no stack axis".into()))?;
    for f in stack {
        if f.axes() != Some(&axes) || !f.same_shape(first) {
            return Err(Error::InvalidArgument("frames of a stack must share shape and axes".into()));
        }
    }
    if window.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("window {window:?} must be non-negative")));
    }
    let (h, w, n) = (first.height(), first.width(), stack.len());
    let specs = [(axes.rows, h), (axes.cols, w), (stack_axis, n)];
    for (spec, len) in specs {
        let q = q0[spec.label.index()];
        if !covers(&spec, len, q) {
            return Err(Error::InvalidArgument(format!("Q0 {q0:?} lies outside the covered {} range", spec.label)));
        }
    }
    let along = specs
        .iter()
        .position(|(s, _)| s.label == axis)
        .ok_or_else(|| Error::InvalidArgument(format!("no axis labelled {axis} in the stack")))?;
    let sel: Vec<Vec<usize>> = specs
        .iter()
        .map(|(s, len)| window_indices(s, *len, q0[s.label.index()], window[s.label.index()]))
        .collect();
    let (spec, len) = specs[along];
    let mut coords = Vec::with_capacity(len);
    let mut intensities = Vec::with_capacity(len);
    let mut errors = Vec::with_capacity(len);
    for i in 0..len {
        let mut ranges = sel.clone();
        ranges[along] = vec![i];
        let (mut sum, mut count) = (0.0f64, 0usize);
        for &k in &ranges[2] {
            let f = &stack[k];
            for &r in &ranges[0] {
                for &c in &ranges[1] {
                    if !f.dead_mask()[r * w + c] {
                        sum += f.get(r, c) as f64;
                        count += 1;
                    }
                }
            }
        }
        coords.push(spec.coord(i as f64));
        if count == 0 {
            return Err(Error::InvalidFrame(format!("scan point {i} covers only dead pixels")));
        }
        intensities.push(sum / count as f64);
        errors.push(sum.max(0.0).sqrt() / count as f64);
    }
    Ok(ScanProjection { axis, coords, intensities, errors, window, background: None })
}

/// Fits a line to the outer `flank` fraction of points on each side and
/// subtracts it.
pub fn subtract_background(scan: &ScanProjection, flank: f64) -> Result<ScanProjection> {
    if !(flank > 0.0 && flank <= 0.4) {
        return Err(Error::InvalidArgument(format!("flank fraction {flank} not in (0, 0.4]")));
    }
    let n = scan.len();
    if n < 8 {
        return Err(Error::InvalidArgument(format!("scan of {n} points is too short for background subtraction")));
    }
    let nf = ((n as f64 * flank).floor() as usize).max(2);
    let pts: Vec<usize> = (0..nf).chain(n - nf..n).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|&i| scan.coords[i]).sum::<f64>() / m;
    let my = pts.iter().map(|&i| scan.intensities[i]).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|&i| (scan.coords[i] - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|&i| (scan.coords[i] - mx) * (scan.intensities[i] - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("background flanks have no coordinate spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let intensities = scan.coords.iter().zip(&scan.intensities).map(|(q, v)| v - (intercept + slope * q)).collect();
    Ok(ScanProjection { intensities, background: Some((intercept, slope)), ..scan.clone() })
}

/// Writes `coordinate,intensity,error`.
pub fn write_scan_csv<W: std::io::Write>(scan: &ScanProjection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["coordinate", "intensity", "error"])?;
    for i in 0..scan.len() {
        w.write_record([scan.coords[i].to_string(), scan.intensities[i].to_string(), scan.errors[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `coordinate,intensity,error` back; the axis is supplied by the caller.
pub fn read_scan_csv<R: std::io::Read>(axis: AxisLabel, src: R) -> Result<ScanProjection> {
    let mut r = csv::Reader::from_reader(src);
    let (mut coords, mut intensities, mut errors) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidFrame(format!("bad scan field {i} in {rec:?}")))
        };
        coords.push(num(0)?);
        intensities.push(num(1)?);
        errors.push(num(2)?);
    }
    Ok(ScanProjection { axis, coords, intensities, errors, window: [0.0; 3], background: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_stack, CdwRod, SceneSpec};

    #[test]
    fn uniform_stack_gives_flat_scan() {
        let scene = SceneSpec::empty(16, 20, 7.0);
        let stack = render_stack(&scene, 0).unwrap();
        let q0 = scene.q_at(8.0, 10.0, 10.0);
        for axis in [AxisLabel::H, AxisLabel::K, AxisLabel::L] {
            let s = project_scan(&stack, q0, axis, [0.01, 0.004, 0.1]).unwrap();
            assert!(s.intensities.iter().all(|&v| (v - 7.0).abs() < 1e-5));
            assert!(s.coords.windows(2).all(|p| p[1] > p[0]));
        }
    }

    #[test]
    fn rod_profile_matches_analytic_marginal() {
        let mut scene = SceneSpec::empty(64, 64, 0.0);
        let rod = CdwRod { center: [0.23, 0.0, 8.5], amplitude: 100.0, sigma_h: 0.01, sigma_k: 0.012, sigma_l: 0.3 };
        scene.rods.push(rod);
        let stack = render_stack(&scene, 0).unwrap();
        let window = [0.0, 0.0, 0.0];
        let s = project_scan(&stack, rod.center, AxisLabel::H, window).unwrap();
        // nearest transverse pixel/frame only: marginal is the rod profile times
        // the transverse factors at those positions
        let r = scene.axes.rows.index_of(8.5).round();
        let k = scene.axes.stack.unwrap().index_of(0.0).round();
        let fl = (-0.5 * ((scene.axes.rows.coord(r) - 8.5) / 0.3).powi(2)).exp();
        let fk = (-0.5 * ((scene.axes.stack.unwrap().coord(k) - 0.0) / 0.012).powi(2)).exp();
        let peak = s.intensities.iter().cloned().fold(0.0, f64::max);
        for (q, v) in s.coords.iter().zip(&s.intensities) {
            let expect = 100.0 * fl * fk * (-0.5 * ((q - 0.23) / 0.01).powi(2)).exp();
            assert!((v - expect).abs() <= 0.01 * peak, "{q}: {v} vs {expect}");
        }
        let imax = s.intensities.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((s.coords[imax] - 0.23).abs() <= scene.axes.cols.step.abs());
    }

    #[test]
    fn errors_for_bad_inputs() {
        let scene = SceneSpec::empty(8, 8, 1.0);
        let stack = render_stack(&scene, 0).unwrap();
        assert!(project_scan(&stack, [5.0, 0.0, 8.5], AxisLabel::H, [0.0; 3]).is_err());
        let bare: Vec<Frame> = stack.iter().map(|f| f.clone().without_axes()).collect();
        assert!(project_scan(&bare, [0.23, 0.0, 8.5], AxisLabel::H, [0.0; 3]).is_err());
    }

    fn scan(coords: Vec<f64>, intensities: Vec<f64>) -> ScanProjection {
        let n = coords.len();
        ScanProjection { axis: AxisLabel::H, coords, intensities, errors: vec![0.0; n], window: [0.0; 3], background: None }
    }

    #[test]
    fn ramp_is_removed() {
        let q: Vec<f64> = (0..20).map(|i| 0.1 + 0.01 * i as f64).collect();
        let s = scan(q.clone(), q.iter().map(|x| 3.0 - 2.0 * x).collect());
        let b = subtract_background(&s, 0.25).unwrap();
        assert!(b.intensities.iter().all(|v| v.abs() < 1e-9));
        let (i0, sl) = b.background.unwrap();
        assert!((i0 - 3.0).abs() < 1e-9 && (sl + 2.0).abs() < 1e-9);
    }

    #[test]
    fn peak_on_constant_keeps_height() {
        let q: Vec<f64> = (0..81).map(|i| -4.0 + 0.1 * i as f64).collect();
        let s = scan(q.clone(), q.iter().map(|x| 10.0 + 5.0 * (-0.5 * (x / 0.4).powi(2)).exp()).collect());
        let b = subtract_background(&s, 0.25).unwrap();
        assert!((b.intensities[40] - 5.0).abs() < 0.05);
        assert!(b.intensities[0].abs() < 0.05);
    }

    #[test]
    fn background_argument_errors() {
        let s = scan((0..10).map(|i| i as f64).collect(), vec![0.0; 10]);
        assert!(subtract_background(&s, 0.5).is_err());
        assert!(subtract_background(&scan(vec![0.0; 4], vec![0.0; 4]), 0.25).is_err());
        assert!(subtract_background(&scan(vec![1.0; 10], vec![0.0; 10]), 0.25).is_err());
    }
}
