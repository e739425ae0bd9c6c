//! Line charts as standalone SVG.
//!
//! Metrics files plot `mmd` against `train_seconds`; sweep files plot
//! `mmd_mean` against `k` on a log axis. All inputs of one chart must be of
//! the same kind. Output depends only on the inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Metrics,
    Sweep,
}

impl ChartKind {
    fn columns(self) -> (&'static str, &'static str) {
        match self {
            Self::Metrics => ("train_seconds", "mmd"),
            Self::Sweep => ("k", "mmd_mean"),
        }
    }

    fn log_x(self) -> bool {
        self == Self::Sweep
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads one CSV file into a series, detecting its kind from the header.
pub fn parse_series(text: &str, label: &str) -> Result<(ChartKind, Series)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| anyhow!("{label}: empty file"))?
        .split(',')
        .map(str::trim)
        .collect();
    let kind = if header.contains(&"train_seconds") && header.contains(&"mmd") {
        ChartKind::Metrics
    } else if header.contains(&"k") && header.contains(&"mmd_mean") {
        ChartKind::Sweep
    } else {
        bail!("{label}: unrecognized header {:?}", header.join(","));
    };
    let (xc, yc) = kind.columns();
    let xi = header.iter().position(|h| *h == xc).unwrap();
    let yi = header.iter().position(|h| *h == yc).unwrap();
    let mut points = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            bail!("{label}: row {} has {} fields, expected {}", n + 1, fields.len(), header.len());
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| anyhow!("{label}: row {}: bad number {s:?}", n + 1))?;
            if !v.is_finite() {
                bail!("{label}: row {}: non-finite value", n + 1);
            }
            Ok(v)
        };
        let (x, y) = (parse(fields[xi])?, parse(fields[yi])?);
        if kind.log_x() && x <= 0.0 {
            bail!("{label}: row {}: k must be positive", n + 1);
        }
        points.push((x, y));
    }
    if points.is_empty() {
        bail!("{label}: no data rows");
    }
    Ok((
        kind,
        Series {
            label: label.to_string(),
            points,
        },
    ))
}

/// Step of roughly `span / 5` from the 1-2-5 family.
fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

fn linear_ticks(lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let step = nice_step(hi - lo);
    let start = (lo / step).floor() * step;
    let end = (hi / step).ceil() * step;
    let count = ((end - start) / step).round() as usize;
    let ticks = (0..=count).map(|i| start + i as f64 * step).collect();
    (start, end, ticks)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders series of one kind into an SVG document.
pub fn render(kind: ChartKind, series: &[Series], title: &str) -> Result<String> {
    if series.is_empty() {
        bail!("nothing to plot");
    }
    let tx = |x: f64| if kind.log_x() { x.log2() } else { x };
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_lo = x_lo.min(tx(x));
        x_hi = x_hi.max(tx(x));
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    let (x_lo, x_hi) = padded(x_lo, x_hi);
    let (y_lo, y_hi) = padded(y_lo.min(0.0), y_hi);
    let (x_lo, x_hi, x_ticks) = if kind.log_x() {
        let lo = x_lo.floor();
        let hi = x_hi.ceil();
        let stride = ((hi - lo) / 6.0).ceil().max(1.0);
        let ticks = (0..).map(|i| lo + i as f64 * stride).take_while(|t| *t <= hi + 1e-9).collect();
        (lo, hi, ticks)
    } else {
        linear_ticks(x_lo, x_hi)
    };
    let (y_lo, y_hi, y_ticks) = linear_ticks(y_lo, y_hi);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| TOP + ph - (y - y_lo) / (y_hi - y_lo) * ph;
    let (x_name, y_name) = match kind {
        ChartKind::Metrics => ("training seconds", "MMD"),
        ChartKind::Sweep => ("anchors k", "mean MMD"),
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    for &t in &x_ticks {
        let x = px(t);
        let label = if kind.log_x() {
            format_tick(2f64.powf(t))
        } else {
            format_tick(t)
        };
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##,
            TOP,
            TOP + ph
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            TOP + ph + 18.0
        );
    }
    for &t in &y_ticks {
        let y = py(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            format_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_name}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{y_name}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(tx(x)), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(tx(x)),
                py(y)
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn label_for(path: &Path, all: &[PathBuf]) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let clashes = all.iter().filter(|p| p.file_stem() == path.file_stem()).count() > 1;
    match path.parent().and_then(|p| p.file_name()) {
        Some(parent) if clashes => parent.to_string_lossy().into_owned(),
        _ => stem,
    }
}

/// Reads the files and renders them into one chart.
pub fn render_files(paths: &[PathBuf], title: Option<&str>) -> Result<String> {
    let mut kind = None;
    let mut series = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let (k, s) = parse_series(&text, &label_for(path, paths))?;
        if kind.is_some_and(|prev| prev != k) {
            bail!("cannot mix metrics and sweep files in one chart");
        }
        kind = Some(k);
        series.push(s);
    }
    let kind = kind.ok_or_else(|| anyhow!("no input files"))?;
    let default_title = match kind {
        ChartKind::Metrics => "MMD during training",
        ChartKind::Sweep => "MMD against anchor count",
    };
    render(kind, &series, title.unwrap_or(default_title))
}
