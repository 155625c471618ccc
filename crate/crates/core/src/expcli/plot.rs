//! Learning curves across seeds, rendered as a standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{episode_returns, read_metrics, MetricsRow};
use crate::agent::Variant;
use crate::error::{Error, Result};

/// Across-seed episode-return statistics of one `(variant, distractors)` group.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub variant: Variant,
    pub distractors: usize,
    pub seeds: usize,
    pub episodes: Vec<usize>,
    pub mean: Vec<f64>,
    /// Sample standard deviation across seeds (zero for a single seed).
    pub std: Vec<f64>,
}

/// The `(variant, distractors)` pair every row of one file must share.
pub(crate) fn file_group(rows: &[MetricsRow], path: &Path) -> Result<(Variant, usize)> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Data(format!("{}: no rows", path.display())))?;
    if let Some(r) = rows.iter().find(|r| r.variant != first.variant || r.distractors != first.distractors) {
        return Err(Error::Data(format!(
            "{}: mixes groups ({}, {}) and ({}, {})",
            path.display(),
            first.variant.name(),
            first.distractors,
            r.variant.name(),
            r.distractors
        )));
    }
    Ok((first.variant, first.distractors))
}

pub(crate) fn group_key(v: Variant, d: usize) -> (&'static str, usize) {
    (v.name(), d)
}

/// Mean and sample (`n − 1`) standard deviation of `xs`, with the deviation of
/// a single value defined as 0. Sums run in sorted order so the result does not
/// depend on file order.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt())
}

pub fn learning_curves(paths: &[PathBuf]) -> Result<Vec<Curve>> {
    if paths.is_empty() {
        return Err(Error::Data("no metrics files given".into()));
    }
    type Returns = BTreeMap<usize, Vec<f64>>;
    let mut groups: BTreeMap<(&'static str, usize), (Variant, usize, usize, Returns)> = BTreeMap::new();
    for path in paths {
        let rows = read_metrics(path)?;
        let (variant, distractors) = file_group(&rows, path)?;
        let entry = groups
            .entry(group_key(variant, distractors))
            .or_insert_with(|| (variant, distractors, 0, BTreeMap::new()));
        entry.2 += 1;
        for (idx, ret) in episode_returns(&rows) {
            entry.3.entry(idx).or_default().push(ret);
        }
    }
    Ok(groups
        .into_values()
        .map(|(variant, distractors, seeds, by_ep)| {
            let (mut episodes, mut mean, mut std) = (Vec::new(), Vec::new(), Vec::new());
            for (idx, xs) in by_ep {
                let (m, s) = mean_std(&xs);
                episodes.push(idx);
                mean.push(m);
                std.push(s);
            }
            Curve {
                variant,
                distractors,
                seeds,
                episodes,
                mean,
                std,
            }
        })
        .collect())
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 210.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Mean curve with a ±1 std band per group; axes are episodes and return.
pub fn render_svg(curves: &[Curve]) -> String {
    let pts = curves.iter().flat_map(|c| c.episodes.iter().zip(c.mean.iter().zip(&c.std)));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&e, (&m, &s)) in pts {
        x0 = x0.min(e as f64);
        x1 = x1.max(e as f64);
        y0 = y0.min(m - s);
        y1 = y1.max(m + s);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">episodes</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">return</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper = c.episodes.iter().zip(c.mean.iter().zip(&c.std)).map(|(&e, (&m, &s))| (sx(e as f64), sy(m + s)));
        let lower = c.episodes.iter().zip(c.mean.iter().zip(&c.std)).rev().map(|(&e, (&m, &s))| (sx(e as f64), sy(m - s)));
        let band: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let line: Vec<String> = c
            .episodes
            .iter()
            .zip(&c.mean)
            .map(|(&e, &m)| format!("{:.2},{:.2}", sx(e as f64), sy(m)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}, distractors {} (n={})</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            c.variant.name(),
            c.distractors,
            c.seeds
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads `paths`, renders, and writes the SVG to `out`.
pub fn plot(paths: &[PathBuf], out: &Path) -> Result<()> {
    let svg = render_svg(&learning_curves(paths)?);
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
