//! Minimal SVG figures: 1D band plots and 2D heatmaps.

use std::fmt::Write as _;

use uqbench_core::linalg::DenseMatrix;
use uqbench_core::predictive::PredictiveGrid;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo < hi) {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, f: &Frame) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for (v, anchor, x) in [(f.x0, "start", l), (f.x1, "end", r)] {
        let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="{anchor}">{v:.2}</text>"#, b + 16.0);
    }
    for (v, y) in [(f.y0, b), (f.y1, t + 10.0)] {
        let _ = writeln!(out, r#"<text x="{}" y="{y}" text-anchor="end">{v:.2}</text>"#, l - 4.0);
    }
}

fn points(f: &Frame, xs: &[f64], ys: &[f64]) -> String {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Shaded 95% band, predictive mean, dashed truth and training points.
pub fn band_plot(grid: &PredictiveGrid, truth: Option<&[f64]>, train_x: &[f64], train_y: &[f64], title: &str) -> String {
    let xs = grid.inputs.as_slice();
    let (x0, x1) = bounds(xs.iter().chain(train_x).copied());
    let (y0, y1) = bounds(
        grid.lower
            .iter()
            .chain(&grid.upper)
            .chain(truth.unwrap_or(&[]))
            .chain(train_y)
            .copied(),
    );
    let pad = 0.05 * (y1 - y0);
    let f = Frame {
        x0,
        x1,
        y0: y0 - pad,
        y1: y1 + pad,
    };
    let mut out = String::new();
    header(&mut out, title);
    let rev_x: Vec<f64> = xs.iter().rev().copied().collect();
    let rev_lo: Vec<f64> = grid.lower.iter().rev().copied().collect();
    let _ = writeln!(
        out,
        r##"<polygon points="{} {}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##,
        points(&f, xs, &grid.upper),
        points(&f, &rev_x, &rev_lo)
    );
    if let Some(truth) = truth {
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#555555" stroke-width="1.5" stroke-dasharray="5,4"/>"##,
            points(&f, xs, truth)
        );
    }
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
        points(&f, xs, &grid.mean)
    );
    for (x, y) in train_x.iter().zip(train_y) {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#d62728"/>"##,
            f.px(*x),
            f.py(*y)
        );
    }
    axes(&mut out, &f);
    out.push_str("</svg>\n");
    out
}

/// Piecewise-linear blue-white-red colour scale on `t ∈ [0, 1]`.
fn colour(t: f64) -> (u8, u8, u8) {
    let stops = [(49.0, 54.0, 149.0), (116.0, 173.0, 209.0), (255.0, 255.0, 191.0), (244.0, 109.0, 67.0), (165.0, 0.0, 38.0)];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    let w = t - i as f64;
    let (a, b) = (stops[i], stops[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * w).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Colour-mapped cells of a square lattice with `x` varying fastest.
pub fn heatmap(inputs: &DenseMatrix, values: &[f64], title: &str) -> String {
    let side = (values.len() as f64).sqrt().round() as usize;
    let (x0, x1) = bounds((0..inputs.rows()).map(|i| inputs[(i, 0)]));
    let (y0, y1) = bounds((0..inputs.rows()).map(|i| inputs[(i, 1)]));
    let (v0, v1) = bounds(values.iter().copied());
    let f = Frame { x0, x1, y0, y1 };
    let cell_w = (WIDTH - 2.0 * MARGIN) / side as f64;
    let cell_h = (HEIGHT - 2.0 * MARGIN) / side as f64;
    let mut out = String::new();
    header(&mut out, &format!("{title} [{v0:.3}, {v1:.3}]"));
    for (i, v) in values.iter().enumerate() {
        let (r, g, b) = colour((v - v0) / (v1 - v0));
        let cx = f.px(inputs[(i, 0)]);
        let cy = f.py(inputs[(i, 1)]);
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({r},{g},{b})"/>"#,
            cx - cell_w / 2.0,
            cy - cell_h / 2.0,
            cell_w + 0.3,
            cell_h + 0.3
        );
    }
    axes(&mut out, &f);
    out.push_str("</svg>\n");
    out
}
