//! Minimal static SVG charts for the study outputs: line/marker plots with optional log
//! axes and box plots of per-level samples. Output is deterministic text.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// How a series is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesStyle {
    Line,
    Markers,
    LineMarkers,
}

/// One named data series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: SeriesStyle,
}

/// An x–y chart.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct XyPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
    /// Horizontal reference lines `(y, label)`.
    pub reference_lines: Vec<(f64, String)>,
}

/// A box plot: one box (quartiles, min–max whiskers) plus the raw points per category.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoxPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_log: bool,
    pub categories: Vec<(String, Vec<f64>)>,
}

/// Linear-interpolated quantile of sorted data (`q ∈ [0,1]`); `NaN` for empty input.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summary `(min, q1, median, q3, max)` of the finite values.
pub fn five_numbers(values: &[f64]) -> [f64; 5] {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    [quantile(&v, 0.0), quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75), quantile(&v, 1.0)]
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    ticks: Vec<f64>,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let vals: Vec<f64> = values.filter(|v| v.is_finite() && (!log || *v > 0.0)).collect();
        let (mut lo, mut hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = if log { (0.1, 10.0) } else { (0.0, 1.0) };
        }
        if log {
            let (a, b) = (lo.log10().floor(), hi.log10().ceil());
            let b = if b <= a { a + 1.0 } else { b };
            let ticks = (a as i32..=b as i32).map(|e| 10f64.powi(e)).collect();
            Self { lo: 10f64.powf(a), hi: 10f64.powf(b), log, ticks }
        } else {
            if hi - lo < 1e-12 * lo.abs().max(1.0) {
                lo -= 0.5 * lo.abs().max(1.0);
                hi += 0.5 * hi.abs().max(1.0);
            }
            let step = nice_step((hi - lo) / 5.0);
            let (a, b) = ((lo / step).floor() * step, (hi / step).ceil() * step);
            let n = ((b - a) / step).round() as usize;
            let ticks = (0..=n).map(|i| a + i as f64 * step).collect();
            Self { lo: a, hi: b, log, ticks }
        }
    }

    fn frac(&self, v: f64) -> f64 {
        if self.log {
            (v.log10() - self.lo.log10()) / (self.hi.log10() - self.lo.log10())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r <= 1.0 {
        1.0
    } else if r <= 2.0 {
        2.0
    } else if r <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn px(x: f64) -> f64 {
    MARGIN_LEFT + x * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
}

fn py(y: f64) -> f64 {
    HEIGHT - MARGIN_BOTTOM - y * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(0.5), HEIGHT - 15.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">{}</text>"#,
        escape(y_label),
        y = py(0.5)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        px(0.0),
        py(1.0),
        px(1.0) - px(0.0),
        py(0.0) - py(1.0)
    );
}

fn y_ticks(out: &mut String, axis: &Axis) {
    for &t in &axis.ticks {
        let y = py(axis.frac(t));
        let _ = writeln!(out, r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, px(0.0), px(1.0));
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, px(0.0) - 6.0, y + 4.0, fmt_tick(t));
    }
}

impl XyPlot {
    /// Render to SVG text.
    pub fn to_svg(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(self.reference_lines.iter().map(|r| r.0));
        let (xa, ya) = (Axis::new(xs, self.x_log), Axis::new(ys, self.y_log));
        let mut out = String::new();
        frame(&mut out, &self.title, &self.x_label, &self.y_label);
        y_ticks(&mut out, &ya);
        for &t in &xa.ticks {
            let x = px(xa.frac(t));
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##, py(0.0), py(1.0));
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, py(0.0) + 16.0, fmt_tick(t));
        }
        for (y, label) in &self.reference_lines {
            let yy = py(ya.frac(*y));
            let _ = writeln!(
                out,
                r##"<line x1="{}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="black" stroke-dasharray="6 4"/>"##,
                px(0.0),
                px(1.0)
            );
            let _ = writeln!(out, r#"<text x="{}" y="{:.2}">{}</text>"#, px(1.0) + 6.0, yy + 4.0, escape(label));
        }
        let valid = |p: &(f64, f64)| p.0.is_finite() && p.1.is_finite() && (!self.x_log || p.0 > 0.0) && (!self.y_log || p.1 > 0.0);
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s.points.iter().filter(|p| valid(p)).map(|p| (px(xa.frac(p.0)), py(ya.frac(p.1)))).collect();
            if matches!(s.style, SeriesStyle::Line | SeriesStyle::LineMarkers) && pts.len() > 1 {
                let d: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
            }
            if matches!(s.style, SeriesStyle::Markers | SeriesStyle::LineMarkers) {
                for (x, y) in &pts {
                    let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{color}" fill-opacity="0.7"/>"#);
                }
            }
            let ly = MARGIN_TOP + 10.0 + 18.0 * k as f64;
            let _ = writeln!(out, r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/>"#, px(1.0) + 8.0, ly - 10.0);
            let _ = writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, px(1.0) + 26.0, escape(&s.name));
        }
        out.push_str("</svg>\n");
        out
    }
}

impl BoxPlot {
    /// Render to SVG text.
    pub fn to_svg(&self) -> String {
        let ys = self.categories.iter().flat_map(|c| c.1.iter().copied());
        let ya = Axis::new(ys, self.y_log);
        let mut out = String::new();
        frame(&mut out, &self.title, &self.x_label, &self.y_label);
        y_ticks(&mut out, &ya);
        let n = self.categories.len().max(1) as f64;
        let ok = |v: f64| v.is_finite() && (!self.y_log || v > 0.0);
        for (i, (label, values)) in self.categories.iter().enumerate() {
            let cx = px((i as f64 + 0.5) / n);
            let half = 0.25 * (px(1.0) - px(0.0)) / n;
            let _ = writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, py(0.0) + 16.0, escape(label));
            let vals: Vec<f64> = values.iter().copied().filter(|&v| ok(v)).collect();
            if vals.is_empty() {
                continue;
            }
            let [lo, q1, med, q3, hi] = five_numbers(&vals).map(|v| py(ya.frac(v)));
            let _ = writeln!(out, r#"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="black"/>"#);
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{q3:.2}" width="{:.2}" height="{:.2}" fill="#aec7e8" stroke="black"/>"##,
                cx - half,
                2.0 * half,
                (q1 - q3).max(0.5)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{med:.2}" x2="{:.2}" y2="{med:.2}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                cx + half
            );
            for v in vals {
                let _ = writeln!(out, r##"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="#d62728" fill-opacity="0.6"/>"##, py(ya.frac(v)));
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(five_numbers(&[4.0, 1.0, 3.0, 2.0, 5.0]), [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let plot = XyPlot {
            title: "a <b>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_log: true,
            y_log: true,
            series: vec![Series { name: "s".into(), points: vec![(1e-4, 1.0), (1.0, 1e4), (0.0, 1.0)], style: SeriesStyle::LineMarkers }],
            reference_lines: vec![(10.0, "ref".into())],
        };
        let svg = plot.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt;b&gt;"));
        assert_eq!(svg, plot.to_svg());
        let bp = BoxPlot {
            title: "t".into(),
            categories: vec![("1e4".into(), vec![1.0, 2.0, 3.0]), ("e".into(), vec![])],
            ..Default::default()
        };
        assert_eq!(bp.to_svg().matches("<rect").count(), 3);
    }
}
