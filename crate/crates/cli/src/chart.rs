//! Minimal SVG line chart of a sweep summary: one panel per metric, all
//! sharing the grid-spacing axis.

use std::fmt::Write;

use crayon_core::metrics::EvalSummary;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 180.0;
const MARGIN: f64 = 50.0;

type Series = (&'static str, &'static str, fn(&EvalSummary) -> f64);

fn panel(out: &mut String, top: f64, title: &str, color: &str, points: &[(f64, f64)], x_range: (f64, f64)) {
    let finite: Vec<f64> = points.iter().map(|p| p.1).filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if finite.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = PANEL_HEIGHT - 2.0 * MARGIN / 1.5;
    let y0 = top + MARGIN / 1.5;
    let sx = |x: f64| MARGIN + (x - x_range.0) / (x_range.1 - x_range.0).max(1e-12) * plot_w;
    let sy = |y: f64| y0 + plot_h - (y - lo) / (hi - lo) * plot_h;

    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{y0}" width="{plot_w}" height="{plot_h}" fill="none" stroke="gray"/>"#
    );
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="{}" font-size="13">{title}</text>"#, y0 - 6.0);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{hi:.4}</text>"#,
        MARGIN - 4.0,
        y0 + 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{lo:.4}</text>"#,
        MARGIN - 4.0,
        y0 + plot_h
    );
    let path: Vec<String> = points
        .iter()
        .filter(|p| p.1.is_finite())
        .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        path.join(" ")
    );
    for &(x, y) in points.iter().filter(|p| p.1.is_finite()) {
        let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" font-size="10" text-anchor="middle">{x}</text>"#,
            sx(x),
            y0 + plot_h + 12.0
        );
    }
}

pub fn summary_svg(rows: &[EvalSummary]) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let x_range = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let series: [Series; 4] = [
        ("mean PSNR (dB)", "#1f77b4", |r| r.mean_psnr),
        ("mean CSIM", "#2ca02c", |r| r.mean_csim),
        ("mean relative size", "#d62728", |r| r.mean_relative_size),
        ("size bound", "#ff7f0e", |r| r.bound),
    ];
    let height = PANEL_HEIGHT * series.len() as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif">"#
    );
    out.push('\n');
    for (i, (title, color, f)) in series.iter().enumerate() {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, f(r))).collect();
        panel(&mut out, i as f64 * PANEL_HEIGHT, title, color, &points, x_range);
    }
    out.push_str("</svg>\n");
    out
}
