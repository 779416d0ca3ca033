//! Static SVG scatter of samples over the manifold outline.
//!
//! Uses the first two ambient coordinates.

use std::fmt::Write as _;

use crate::manifold::ManifoldChart;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 24.0;
const MAX_DOTS: usize = 20_000;
const OUTLINE_NODES: usize = 720;

pub fn scatter_svg<'a>(chart: &ManifoldChart, points: impl Iterator<Item = &'a [f64]>) -> String {
    let pts: Vec<&[f64]> = points.collect();
    let outline: Vec<(f64, f64)> = (0..=OUTLINE_NODES)
        .map(|k| {
            let p = chart.point(std::f64::consts::TAU * k as f64 / OUTLINE_NODES as f64);
            (p[0], p[1])
        })
        .collect();
    let half = outline
        .iter()
        .map(|(x, y)| x.abs().max(y.abs()))
        .fold(0.0f64, f64::max)
        * 1.25;
    let scale = (SIZE - 2.0 * MARGIN) / (2.0 * half);
    let map = |x: f64, y: f64| (MARGIN + (x + half) * scale, SIZE - MARGIN - (y + half) * scale);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let stride = pts.len().div_ceil(MAX_DOTS).max(1);
    let _ = writeln!(svg, r##"<g fill="#1f5fbf" fill-opacity="0.35">"##);
    for p in pts.iter().step_by(stride) {
        let (x, y) = (p[0], p.get(1).copied().unwrap_or(0.0));
        if x.abs() > half || y.abs() > half {
            continue;
        }
        let (sx, sy) = map(x, y);
        let _ = writeln!(svg, r#"<circle cx="{sx:.2}" cy="{sy:.2}" r="1.2"/>"#);
    }
    let _ = writeln!(svg, "</g>");
    let mut path = String::new();
    for (k, (x, y)) in outline.iter().enumerate() {
        let (sx, sy) = map(*x, *y);
        let _ = write!(path, "{}{sx:.2},{sy:.2} ", if k == 0 { "M" } else { "L" });
    }
    let _ = writeln!(
        svg,
        r##"<path d="{}" fill="none" stroke="#c0392b" stroke-width="1.5"/>"##,
        path.trim_end()
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="12">{} ({} samples)</text>"#,
        MARGIN - 6.0,
        chart.describe(),
        pts.len()
    );
    svg.push_str("</svg>\n");
    svg
}
