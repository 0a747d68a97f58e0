//! Minimal standalone SVG charts. Presentation only: every plotted number
//! also lands in a CSV next to the figure.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#555555"];

pub enum Series {
    Line { name: String, points: Vec<(f64, f64)> },
    /// Markers with symmetric vertical error bars.
    Points { name: String, points: Vec<(f64, f64, f64)> },
    /// Histogram bars from `edges` (one longer than `counts`).
    Bars { name: String, edges: Vec<f64>, counts: Vec<f64> },
}

impl Series {
    fn name(&self) -> &str {
        match self {
            Series::Line { name, .. } | Series::Points { name, .. } | Series::Bars { name, .. } => name,
        }
    }

    fn extent(&self) -> Vec<(f64, f64)> {
        match self {
            Series::Line { points, .. } => points.clone(),
            Series::Points { points, .. } => {
                points.iter().flat_map(|&(x, y, e)| [(x, y - e), (x, y + e)]).collect()
            }
            Series::Bars { edges, counts, .. } => {
                let mut v: Vec<(f64, f64)> = edges.iter().map(|&x| (x, 0.0)).collect();
                v.extend(counts.iter().enumerate().map(|(i, &c)| (edges[i], c)));
                v
            }
        }
    }
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= n as f64).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    (0..=n * 2).map(|i| first + step * i as f64).take_while(|v| *v <= hi + 1e-9 * span).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1e6).round() / 1e6)
    }
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), log_y: false, series: Vec::new() }
    }

    pub fn render(&self) -> String {
        let ty = |y: f64| if self.log_y { y.max(1e-300).log10() } else { y };
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.extent())
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_y || *y > 0.0))
            .map(|(x, y)| (x, ty(y)))
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in nice_ticks(x0, x1, 6) {
            let x = sx(t);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, fmt_tick(t));
        }
        for t in nice_ticks(y0, y1, 6) {
            let y = TOP + (1.0 - (t - y0) / (y1 - y0)) * ph;
            let label = if self.log_y { format!("1e{t}") } else { fmt_tick(t) };
            let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 8.0, y + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            match series {
                Series::Line { points, .. } => {
                    let path: Vec<String> = points
                        .iter()
                        .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_y || *y > 0.0))
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                        .collect();
                    let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.8" points="{}"/>"#, path.join(" "));
                }
                Series::Points { points, .. } => {
                    for &(x, y, e) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                        let (px, py) = (sx(x), sy(y));
                        if e > 0.0 {
                            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{c}"/>"#, sy(y - e), sy(y + e));
                        }
                        let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{c}"/>"#);
                    }
                }
                Series::Bars { edges, counts, .. } => {
                    for (j, &n) in counts.iter().enumerate() {
                        let (xa, xb) = (sx(edges[j]), sx(edges[j + 1]));
                        let (ya, yb) = (sy(n), sy(0.0_f64.max(if self.log_y { 1.0 } else { 0.0 })));
                        let _ = writeln!(
                            s,
                            r#"<rect x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.45" stroke="{c}"/>"#,
                            (xb - xa).max(0.0),
                            (yb - ya).max(0.0)
                        );
                    }
                }
            }
            let ly = TOP + 16.0 + 16.0 * i as f64;
            let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="4" fill="{c}"/>"#, W - RIGHT - 150.0, ly - 6.0);
            let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - RIGHT - 132.0, escape(series.name()));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Grayscale heatmap of `values` (row-major) mapped linearly from `lo` to `hi`.
pub fn heatmap(title: &str, height: usize, width: usize, values: &[f32], lo: f64, hi: f64) -> String {
    let cell = (480.0 / height.max(width) as f64).max(1.0);
    let (w, h) = (cell * width as f64, cell * height as f64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="sans-serif" font-size="12">"#,
        w + 20.0,
        h + 50.0
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    for r in 0..height {
        for c in 0..width {
            let v = values[r * width + c] as f64;
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            let g = (255.0 * t).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({g},{g},{g})"/>"#,
                10.0 + cell * c as f64,
                30.0 + cell * r as f64
            );
        }
    }
    let _ = writeln!(s, r#"<text x="10" y="{:.0}">black = {lo}, white = {hi}</text>"#, h + 45.0);
    s.push_str("</svg>\n");
    s
}
