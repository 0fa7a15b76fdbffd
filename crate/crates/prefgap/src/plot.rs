//! Deterministic SVG line plots from the CSV tables this crate writes.
//!
//! Output depends only on the input bytes: no timestamps, fixed float
//! formatting, series in sorted order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;

use crate::error::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// `iter,loss,value` from an online run.
    Trajectory,
    /// Summary of estimation errors; log-log.
    Separation,
    /// Summary of policy gaps; log-log.
    Suboptimality,
    /// `x,rl_grad,dpo_grad,online_grad`; each curve rescaled to unit peak.
    GradientCurve,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Result<usize, AppError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AppError::Schema(format!("missing column {name}")))
    }
}

fn read_table(path: &Path) -> Result<Table, AppError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let rows: Vec<Vec<String>> =
        r.records().map(|rec| rec.map(|x| x.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
    if header.iter().all(|h| h.is_empty()) || rows.is_empty() {
        return Err(AppError::Schema(format!("{} has no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

fn parse(s: &str, what: &str) -> Result<f64, AppError> {
    s.trim().parse::<f64>().map_err(|_| AppError::Schema(format!("column {what}: not a number: {s:?}")))
}

fn series_from_columns(t: &Table, x: &str, ys: &[&str], rescale: bool) -> Result<Vec<Series>, AppError> {
    let xi = t.col(x)?;
    let mut out = Vec::new();
    for y in ys {
        let yi = t.col(y)?;
        let mut pts = Vec::with_capacity(t.rows.len());
        for r in &t.rows {
            pts.push((parse(&r[xi], x)?, parse(&r[yi], y)?));
        }
        if rescale {
            let peak = pts.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
            if peak > 0.0 {
                pts.iter_mut().for_each(|p| p.1 /= peak);
            }
        }
        out.push(Series { label: (*y).to_string(), points: pts });
    }
    Ok(out)
}

fn series_from_summary(t: &Table) -> Result<Vec<Series>, AppError> {
    let (ni, mi, ci, vi) = (t.col("n")?, t.col("method")?, t.col("gamma_c")?, t.col("mean")?);
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &t.rows {
        let label = if r[ci].is_empty() { r[mi].clone() } else { format!("{} c={}", r[mi], r[ci]) };
        groups.entry(label).or_default().push((parse(&r[ni], "n")?, parse(&r[vi], "mean")?));
    }
    Ok(groups
        .into_iter()
        .map(|(label, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label, points }
        })
        .collect())
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions in data units.
    fn ticks(&self) -> Vec<f64> {
        if self.log {
            return (self.lo as i32..=self.hi as i32).map(|e| 10f64.powi(e)).collect();
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-9 * step {
            out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
            t += step;
        }
        out
    }
}

fn label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.log10().round() as i32)
    } else if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn render(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log: bool) -> String {
    let keep = |p: &&(f64, f64)| p.0.is_finite() && p.1.is_finite() && (!log || (p.0 > 0.0 && p.1 > 0.0));
    let xs = Axis::fit(series.iter().flat_map(|s| s.points.iter().filter(keep).map(|p| p.0)), log);
    let ys = Axis::fit(series.iter().flat_map(|s| s.points.iter().filter(keep).map(|p| p.1)), log);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + xs.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ys.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, esc(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for t in xs.ticks() {
        let x = px(t);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, label(t, log));
    }
    for t in ys.ticks() {
        let y = py(t);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, label(t, log));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().filter(keep).map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, esc(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `input` as an SVG of the given kind.
pub fn plot_svg(kind: PlotKind, input: &Path) -> Result<String, AppError> {
    let t = read_table(input)?;
    Ok(match kind {
        PlotKind::Trajectory => {
            render("online DPO trajectory", "iteration", "value / loss", &series_from_columns(&t, "iter", &["value", "loss"], false)?, false)
        }
        PlotKind::Separation => render("estimation error", "n", "mean semi-norm error", &series_from_summary(&t)?, true),
        PlotKind::Suboptimality => render("policy sub-optimality", "n", "mean gap", &series_from_summary(&t)?, true),
        PlotKind::GradientCurve => render(
            "gradients along the log-ratio coordinate (rescaled)",
            "x",
            "gradient / max |gradient|",
            &series_from_columns(&t, "x", &["rl_grad", "dpo_grad", "online_grad"], true)?,
            false,
        ),
    })
}

pub fn plot_file(kind: PlotKind, input: &Path, output: &Path) -> Result<(), AppError> {
    let svg = plot_svg(kind, input)?;
    if let Some(p) = output.parent() {
        crate::output::ensure_dir(p)?;
    }
    std::fs::write(output, svg)?;
    Ok(())
}
