//! Result document, CSV tables and self-contained SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Effective, Format};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = self.columns.iter().position(|c| c == name).expect("unknown column");
        self.rows.iter().map(|r| r[i]).collect()
    }

    /// Header plus rows in `%.11e`, i.e. 12 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| fmt_sci(*v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn fmt_sci(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        format!("{v}")
    }
}

/// One comparison against a stated tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        Self { name: name.into(), observed, expected, tolerance, pass: (observed - expected).abs() <= tolerance }
    }

    pub fn below(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self { name: name.into(), observed, expected: bound, tolerance: 0.0, pass: observed < bound }
    }

    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), observed: pass as u8 as f64, expected: 1.0, tolerance: 0.0, pass }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub style: Style,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Line,
    Steps,
    Points,
}

#[derive(Clone, Debug, Serialize)]
pub struct Plot {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Serialize)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub command: String,
    pub software_version: String,
    pub seed: u64,
    pub config: Effective,
    pub elapsed_seconds: f64,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub plots: Vec<Plot>,
}

impl ExperimentResult {
    pub fn new(command: &str, config: &Effective) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            elapsed_seconds: 0.0,
            tables: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            plots: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Writes the requested formats into `out_dir` and returns the paths written.
    pub fn write(&self, out_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir)?;
        let mut written = Vec::new();
        if self.config.wants(Format::Json) {
            let p = out_dir.join(format!("{}.json", self.command));
            fs::write(&p, serde_json::to_string_pretty(self).expect("result serializes"))?;
            written.push(p);
        }
        if self.config.wants(Format::Csv) {
            for t in &self.tables {
                let p = out_dir.join(format!("{}_{}.csv", self.command, t.name));
                fs::write(&p, t.to_csv())?;
                written.push(p);
            }
        }
        if self.config.wants(Format::Svg) {
            for plot in &self.plots {
                let p = out_dir.join(format!("{}_{}.svg", self.command, plot.name));
                fs::write(&p, render_svg(plot))?;
                written.push(p);
            }
        }
        Ok(written)
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Line, step and point overlays with axes, ticks and a legend.
pub fn render_svg(plot: &Plot) -> String {
    let (w, h) = (720.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 55.0);
    let finite = |v: &&f64| v.is_finite();
    let xs: Vec<f64> = plot.series.iter().flat_map(|s| s.x.iter().filter(finite).copied()).collect();
    let ys: Vec<f64> = plot.series.iter().flat_map(|s| s.y.iter().filter(finite).copied()).collect();
    let (mut x0, mut x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (mut y0, mut y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min).min(0.0), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if !(x0.is_finite() && x1 > x0) {
        (x0, x1) = (0.0, 1.0);
    }
    if !(y0.is_finite() && y1 > y0) {
        (y0, y1) = (0.0, 1.0);
    }
    y1 += 0.05 * (y1 - y0);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(&plot.title));
    let _ = writeln!(s, r#"<g stroke="black" fill="none"><rect x="{ml}" y="{mt}" width="{}" height="{}"/></g>"#, w - ml - mr, h - mt - mb);
    for t in nice_ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, h - mb, h - mb + 5.0, h - mb + 18.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{ml}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ml - 5.0, ml - 8.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ml + w - mr) / 2.0, h - 15.0, escape(&plot.x_label));
    let _ = writeln!(s, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#, (mt + h - mb) / 2.0, (mt + h - mb) / 2.0, escape(&plot.y_label));

    for (i, series) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = series.x.iter().zip(&series.y).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)).collect();
        match series.style {
            Style::Points => {
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}"/>"#, px(*x), py(*y));
                }
            }
            Style::Line | Style::Steps => {
                let mut d = String::new();
                for (k, (x, y)) in pts.iter().enumerate() {
                    if series.style == Style::Steps && k > 0 {
                        let _ = write!(d, "H{:.2}V{:.2}", px(*x), py(*y));
                    } else {
                        let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { "L" }, px(*x), py(*y));
                    }
                }
                let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
            }
        }
        let ly = mt + 15.0 + 16.0 * i as f64;
        let lx = w - mr - 200.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#, lx + 20.0, lx + 26.0, ly + 4.0, escape(&series.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_twelve_significant_digits() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![1.0 / 3.0, -2.5e-7]);
        let csv = t.to_csv();
        assert_eq!(csv, "a,b\n3.33333333333e-1,-2.50000000000e-7\n");
        let back: f64 = csv.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
        assert!((back - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn svg_is_self_contained() {
        let plot = Plot {
            name: "p".into(),
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![
                Series { label: "s".into(), x: vec![0.0, 1.0, 2.0], y: vec![0.0, 1.0, f64::NAN], style: Style::Line },
                Series { label: "h".into(), x: vec![0.0, 1.0], y: vec![0.5, 0.2], style: Style::Steps },
            ],
        };
        let svg = render_svg(&plot);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("href"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(-1.0, 1.0);
        assert!(t.contains(&0.0) && t.first().unwrap() >= &-1.0 && t.last().unwrap() <= &1.0);
    }
}
