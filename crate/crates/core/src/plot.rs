//! Minimal SVG line charts for CSV curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads a CSV with a header row. The first column is x; every other column
/// becomes a series. Non-numeric cells are skipped.
pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<Series>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::format(path, "empty CSV"))?.split(',').collect();
    if header.len() < 2 {
        return Err(Error::format(path, "need an x column and at least one y column"));
    }
    let mut series: Vec<Series> =
        header[1..].iter().map(|h| Series { name: h.trim().to_string(), points: Vec::new() }).collect();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let Some(Ok(x)) = cells.first().map(|c| c.trim().parse::<f64>()) else { continue };
        for (s, cell) in series.iter_mut().zip(cells.iter().skip(1)) {
            if let Ok(y) = cell.trim().parse::<f64>() {
                if y.is_finite() {
                    s.points.push((x, y));
                }
            }
        }
    }
    series.retain(|s| !s.points.is_empty());
    if series.is_empty() {
        return Err(Error::format(path, "no numeric data"));
    }
    Ok(series)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the series as polylines with axes, tick labels and a legend.
pub fn line_chart_svg(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (left, bottom, right, top) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(svg, r#"<line x1="{px}" y1="{bottom}" x2="{px}" y2="{}" stroke="black"/>"#, bottom + 4.0);
        let _ = writeln!(svg, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, bottom + 16.0, tick(xv));
        let _ = writeln!(svg, r#"<line x1="{}" y1="{py}" x2="{left}" y2="{py}" stroke="black"/>"#, left - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 14.0 * i as f64 + 4.0;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, right - 110.0, right - 90.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, right - 86.0, ly + 4.0, escape(&s.name));
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Reads `csv` and writes its chart to `svg`.
pub fn plot_csv(csv: impl AsRef<Path>, svg: impl AsRef<Path>, title: &str) -> Result<usize> {
    let csv = csv.as_ref();
    let series = read_curve_csv(csv)?;
    let text = fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let x_label = text.lines().next().and_then(|h| h.split(',').next()).unwrap_or("x").to_string();
    let out = svg.as_ref();
    fs::write(out, line_chart_svg(&series, title, &x_label, "value")).map_err(|e| Error::io(out, e))?;
    Ok(series.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_curves_and_draws_each() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("returns.csv");
        fs::write(&csv, "episode,return,moving_avg\n0,1.0,1.0\n1,3.0,2.0\n2,2.0,2.0\n").unwrap();
        let series = read_curve_csv(&csv).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[1].points, vec![(0.0, 1.0), (1.0, 2.0), (2.0, 2.0)]);
        let svg_path = dir.path().join("r.svg");
        assert_eq!(plot_csv(&csv, &svg_path, "Returns <&>").unwrap(), 2);
        let svg = fs::read_to_string(svg_path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("Returns &lt;&amp;&gt;"));
    }

    #[test]
    fn rejects_non_numeric_input() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("bad.csv");
        fs::write(&csv, "a,b\nx,y\n").unwrap();
        assert!(read_curve_csv(&csv).is_err());
        fs::write(&csv, "").unwrap();
        assert!(read_curve_csv(&csv).is_err());
    }

    #[test]
    fn flat_series_still_renders() {
        let s = Series { name: "flat".into(), points: vec![(0.0, 2.0), (1.0, 2.0)] };
        let svg = line_chart_svg(&[s], "t", "x", "y");
        assert!(!svg.contains("NaN"));
    }
}
