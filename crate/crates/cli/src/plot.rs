//! Minimal SVG line plots of CSV columns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One named series of `(x, y)` points in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads `x_column` and each of `y_columns` from a CSV file. Rows with an
/// empty or non-finite cell are left out of that series.
pub fn read_series(csv_path: &Path, x_column: &str, y_columns: &[String]) -> Result<Vec<Series>> {
    let mut reader = csv::Reader::from_path(csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("column `{name}` not found in {}", csv_path.display()))
    };
    let xi = find(x_column)?;
    let yis = y_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let mut series: Vec<Series> = y_columns
        .iter()
        .map(|name| Series {
            name: name.clone(),
            points: Vec::new(),
        })
        .collect();
    let mut n_rows = 0usize;
    for (row_no, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("row {}", row_no + 1))?;
        n_rows += 1;
        let cell = |i: usize| record.get(i).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite());
        let Some(x) = cell(xi) else { continue };
        for (s, &yi) in series.iter_mut().zip(&yis) {
            if let Some(y) = cell(yi) {
                s.points.push((x, y));
            }
        }
    }
    if n_rows == 0 {
        bail!("{} has no data rows", csv_path.display());
    }
    if series.iter().all(|s| s.points.is_empty()) {
        bail!("{} has no numeric values in the requested columns", csv_path.display());
    }
    Ok(series)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo < hi {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if (1e-2..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the series as a standalone SVG document. Output depends only on
/// the inputs.
pub fn render_svg(series: &[Series], x_label: &str) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (y0, y1) = range(all().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}"/></g>"#,
        b = TOP + ph,
        r = LEFT + pw
    );
    for k in 0..=TICKS {
        let t = k as f64 / TICKS as f64;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{b:.2}" x2="{px:.2}" y2="{b5:.2}" stroke="black"/><text x="{px:.2}" y="{bt:.2}" text-anchor="middle">{}</text>"#,
            tick_label(xv),
            b = TOP + ph,
            b5 = TOP + ph + 5.0,
            bt = TOP + ph + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{l5:.2}" y1="{py:.2}" x2="{LEFT:.2}" y2="{py:.2}" stroke="black"/><text x="{lt:.2}" y="{pyt:.2}" text-anchor="end">{}</text>"#,
            tick_label(yv),
            l5 = LEFT - 5.0,
            lt = LEFT - 8.0,
            pyt = py + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(svg, r#"<g class="series" data-name="{}">"#, escape(&s.name));
        if coords.len() >= 2 {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let _ = writeln!(svg, "</g>");
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><rect x="{lx:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            ly - 10.0,
            lx + 18.0,
            ly,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Plots `y_columns` against `x_column` from a CSV file into an SVG file.
pub fn emit_plot(csv_path: &Path, x_column: &str, y_columns: &[String], svg_path: &Path) -> Result<()> {
    if y_columns.is_empty() {
        bail!("no y columns requested");
    }
    let series = read_series(csv_path, x_column, y_columns)?;
    let svg = render_svg(&series, x_column);
    if let Some(parent) = svg_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(svg_path, svg).with_context(|| format!("writing {}", svg_path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(0.0), "0");
        assert_eq!(tick_label(2.5), "2.5");
        assert_eq!(tick_label(100.0), "100");
        assert_eq!(tick_label(1e-5), "1.00e-5");
    }

    #[test]
    fn constant_range_is_padded() {
        assert_eq!(range([0.0, 0.0].into_iter()), (-1.0, 1.0));
        let (a, b) = range([2.0].into_iter());
        assert!(a < 2.0 && b > 2.0);
    }

    #[test]
    fn names_are_escaped() {
        let s = render_svg(
            &[Series {
                name: "a<b".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
            }],
            "x&y",
        );
        assert!(s.contains("a&lt;b") && s.contains("x&amp;y"));
    }
}
