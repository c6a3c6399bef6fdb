//! Byte-stable SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use wassdiff_core::bounds::fit_rate;

use crate::error::CliError;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LogLog,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { label: label.into(), x, y }
    }

    /// Log-log slope, when at least three points are available.
    pub fn slope(&self) -> Option<f64> {
        fit_rate(&self.x, &self.y).ok().map(|f| f.slope)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Labels<'a> {
    pub title: &'a str,
    pub x: &'a str,
    pub y: &'a str,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo < 1e-12 {
            let pad = if log { 0.5 } else { (lo.abs() * 0.1).max(1.0) };
            lo -= pad;
            hi += pad;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions (in data units) with their labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let mults: &[f64] = if b - a < 2 { &[1.0, 2.0, 5.0] } else { &[1.0] };
            let mut out = Vec::new();
            for k in (a - 1)..=(b + 1) {
                for &m in mults {
                    let v = m * 10f64.powi(k);
                    let l = v.log10();
                    if l >= self.lo && l <= self.hi {
                        out.push((v, format!("{m}e{k}")));
                    }
                }
            }
            out
        } else {
            // smallest 1-2-5 step giving at most 7 intervals
            let span = self.hi - self.lo;
            let mag = 10f64.powf((span / 7.0).log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 7.0).unwrap_or(10.0 * mag);
            let decimals = (-step.log10().floor()).max(0.0) as usize;
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last).map(|k| (k as f64 * step, format!("{:.*}", decimals, k as f64 * step))).collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn validate(series: &[Series], kind: PlotKind) -> Result<(), CliError> {
    if series.is_empty() {
        return Err(CliError::Plot("no series to plot".into()));
    }
    for s in series {
        if s.x.len() != s.y.len() || s.x.is_empty() {
            return Err(CliError::Plot(format!("series {:?} has mismatched or empty coordinates", s.label)));
        }
        for v in s.x.iter().chain(&s.y) {
            if !v.is_finite() {
                return Err(CliError::Plot(format!("series {:?} has a non-finite value", s.label)));
            }
            if kind == PlotKind::LogLog && *v <= 0.0 {
                return Err(CliError::Plot(format!("series {:?} has a nonpositive value on a log-log plot", s.label)));
            }
        }
    }
    Ok(())
}

pub fn render_plot(series: &[Series], kind: PlotKind, labels: Labels<'_>) -> Result<String, CliError> {
    validate(series, kind)?;
    let log = kind == PlotKind::LogLog;
    let ax = Axis::fit(series.iter().flat_map(|s| s.x.iter().copied()), log);
    let ay = Axis::fit(series.iter().flat_map(|s| s.y.iter().copied()), log);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |v: f64| LEFT + ax.unit(v) * pw;
    let py = |v: f64| TOP + (1.0 - ay.unit(v)) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="30" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        escape(labels.title)
    );
    let _ = writeln!(w, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (v, text) in ax.ticks() {
        let x = px(v);
        let _ = writeln!(w, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/>"##, TOP + ph);
        let _ = writeln!(
            w,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{text}</text>"#,
            TOP + ph + 18.0
        );
    }
    for (v, text) in ay.ticks() {
        let y = py(v);
        let _ = writeln!(w, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, LEFT + pw);
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{text}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 20.0,
        escape(labels.x)
    );
    let _ = writeln!(
        w,
        r#"<text x="20" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(labels.y)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = s.x.iter().zip(&s.y).map(|(&x, &y)| (x, y)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for (x, y) in &pts {
            let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(*x), py(*y));
        }
        let ly = TOP + 20.0 + 22.0 * k as f64;
        let lx = WIDTH - RIGHT + 20.0;
        let label = match (log, s.slope()) {
            (true, Some(m)) => format!("{} (slope {m:.2})", s.label),
            _ => s.label.clone(),
        };
        let _ = writeln!(w, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 24.0);
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(&label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(series: &[Series], kind: PlotKind, labels: Labels<'_>, path: &Path) -> Result<(), CliError> {
    let svg = render_plot(series, kind, labels)?;
    std::fs::write(path, svg).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: Labels<'static> = Labels { title: "t", x: "h", y: "error" };

    #[test]
    fn identity_series_has_unit_slope_label() {
        let xs = vec![0.01, 0.1, 1.0, 10.0];
        let svg = render_plot(&[Series::new("id", xs.clone(), xs)], PlotKind::LogLog, L).unwrap();
        assert!(svg.contains("id (slope 1.00)"));
        assert!(svg.starts_with("<svg") && svg.contains(r#"width="800""#) && svg.contains(r#"height="600""#));
    }

    #[test]
    fn legend_follows_input_order() {
        let a = Series::new("first", vec![1.0, 2.0, 4.0], vec![1.0, 4.0, 16.0]);
        let b = Series::new("second", vec![1.0, 2.0, 4.0], vec![2.0, 2.0, 2.0]);
        let svg = render_plot(&[a, b], PlotKind::LogLog, L).unwrap();
        let (i, j) = (svg.find("first (slope 2.00)").unwrap(), svg.find("second (slope 0.00)").unwrap());
        assert!(i < j);
    }

    #[test]
    fn output_is_byte_stable() {
        let s = Series::new("s", vec![0.5, 0.25, 0.125], vec![0.3, 0.16, 0.07]);
        let a = render_plot(&[s.clone()], PlotKind::LogLog, L).unwrap();
        let b = render_plot(&[s], PlotKind::LogLog, L).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(render_plot(&[], PlotKind::Linear, L).is_err());
        let neg = Series::new("n", vec![1.0, 2.0], vec![-1.0, 1.0]);
        assert!(render_plot(&[neg.clone()], PlotKind::LogLog, L).is_err());
        assert!(render_plot(&[neg], PlotKind::Linear, L).is_ok());
        let short = Series::new("s", vec![1.0], vec![]);
        assert!(render_plot(&[short], PlotKind::Linear, L).is_err());
    }

    #[test]
    fn linear_ticks_are_round() {
        let axis = Axis::fit([0.0, 1.0].into_iter(), false);
        let ticks: Vec<String> = axis.ticks().into_iter().map(|t| t.1).collect();
        assert_eq!(ticks, ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"]);
    }
}
