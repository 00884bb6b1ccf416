//! Pure-function SVG emission: log-log error-vs-h scatter with the fitted
//! line and reference-slope guides. No display server, no timestamps.

use crate::error::{LabError, Result};
use ewel_core::weak_error::RateFit;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;

/// Renders a log-log sweep plot. `guides` are reference slopes drawn as
/// dashed lines anchored at the first point; the fitted slope is annotated
/// with three decimals (the same value written to the rate-fit JSON).
pub fn emit_plot(
    path: &Path,
    title: &str,
    points: &[(f64, f64, f64)],
    fit: Option<&RateFit>,
    guides: &[f64],
) -> Result<()> {
    if points.len() < 2 {
        return Err(LabError::Config(format!(
            "plot wants at least 2 points, got {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points
        .iter()
        .map(|p| p.1.max(1e-300).ln())
        .collect();
    let (xmin, xmax) = bounds(&xs);
    let (mut ymin, mut ymax) = bounds(&ys);
    if let Some(f) = fit {
        for &x in &[xmin, xmax] {
            let v = f.intercept + f.slope * x;
            ymin = ymin.min(v);
            ymax = ymax.max(v);
        }
    }
    if !(xmax > xmin) || !(ymax > ymin) {
        return Err(LabError::Numerical(
            "degenerate plot axis range (all points coincide)".into(),
        ));
    }
    let pad = 0.05 * (ymax - ymin);
    let (ymin, ymax) = (ymin - pad, ymax + pad);

    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let px = ML + (x - xmin) / (xmax - xmin) * (W - ML - MR);
        let py = H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB);
        (px, py)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    ));
    // Axes box.
    svg.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    // Ticks at powers of two on h, decades on the error.
    let mut k = (xmin / std::f64::consts::LN_2).ceil() as i64;
    while (k as f64) * std::f64::consts::LN_2 <= xmax {
        let x = k as f64 * std::f64::consts::LN_2;
        let (px, _) = to_px(x, ymin);
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#cccccc\"/>\n",
            MT,
            H - MB
        ));
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">2^{k}</text>\n",
            H - MB + 16.0
        ));
        k += 1;
    }
    let mut d = (ymin / std::f64::consts::LN_10).ceil() as i64;
    while (d as f64) * std::f64::consts::LN_10 <= ymax {
        let y = d as f64 * std::f64::consts::LN_10;
        let (_, py) = to_px(xmin, y);
        svg.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#cccccc\"/>\n",
            W - MR
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">1e{d}</text>\n",
            ML - 6.0,
            py + 4.0
        ));
        d += 1;
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">h</text>\n",
        W / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">error</text>\n",
        H / 2.0,
        H / 2.0
    ));

    // Reference-slope guides anchored at the first point.
    let colors = ["#888888", "#bbaa66"];
    for (i, &g) in guides.iter().enumerate() {
        let c = colors[i % colors.len()];
        let y0 = ys[0] + g * (xmin - xs[0]);
        let y1 = ys[0] + g * (xmax - xs[0]);
        let (px0, py0) = to_px(xmin, y0);
        let (px1, py1) = to_px(xmax, y1);
        svg.push_str(&format!(
            "<line x1=\"{px0}\" y1=\"{py0}\" x2=\"{px1}\" y2=\"{py1}\" stroke=\"{c}\" \
             stroke-dasharray=\"6 4\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\">slope {g}</text>\n",
            px1 - 90.0,
            py1 - 6.0
        ));
    }

    // Fitted line and annotation.
    if let Some(f) = fit {
        let (px0, py0) = to_px(xmin, f.intercept + f.slope * xmin);
        let (px1, py1) = to_px(xmax, f.intercept + f.slope * xmax);
        svg.push_str(&format!(
            "<line x1=\"{px0}\" y1=\"{py0}\" x2=\"{px1}\" y2=\"{py1}\" stroke=\"#cc3333\" \
             stroke-width=\"1.5\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"#cc3333\">fit slope {:.3}</text>\n",
            ML + 10.0,
            MT + 18.0,
            f.slope
        ));
    }

    // Markers with error bars.
    for (i, &(_, _, se)) in points.iter().enumerate() {
        let (px, py) = to_px(xs[i], ys[i]);
        if se > 0.0 && points[i].1 > se {
            let hi = (points[i].1 + se).ln();
            let lo = (points[i].1 - se).max(1e-300).ln();
            let (_, py_hi) = to_px(xs[i], hi);
            let (_, py_lo) = to_px(xs[i], lo);
            svg.push_str(&format!(
                "<line x1=\"{px}\" y1=\"{py_hi}\" x2=\"{px}\" y2=\"{py_lo}\" stroke=\"#3355bb\"/>\n"
            ));
        }
        svg.push_str(&format!(
            "<circle cx=\"{px}\" cy=\"{py}\" r=\"3.5\" fill=\"#3355bb\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
