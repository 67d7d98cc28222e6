//! Bare-bones SVG figures: polylines, bars, a grid and labels. The CSV
//! exports carry the numbers; these are only for a quick look.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let gx = MARGIN + f * (W - 2.0 * MARGIN);
        let gy = H - MARGIN - f * (H - 2.0 * MARGIN);
        let _ = writeln!(out, r##"<line x1="{gx:.2}" y1="{MARGIN}" x2="{gx:.2}" y2="{}" stroke="#ddd"/>"##, H - MARGIN);
        let _ = writeln!(out, r##"<line x1="{MARGIN}" y1="{gy:.2}" x2="{}" y2="{gy:.2}" stroke="#ddd"/>"##, W - MARGIN);
        let _ = writeln!(out, r#"<text x="{gx:.2}" y="{}" text-anchor="middle">{:.4}</text>"#, H - MARGIN + 14.0, x.0 + f * (x.1 - x.0));
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.4}</text>"#, MARGIN - 4.0, gy + 4.0, y.0 + f * (y.1 - y.0));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

/// One polyline per series on shared axes.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series<'_>]) -> String {
    let x = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let y = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |v: f64| MARGIN + (v - x.0) / (x.1 - x.0) * (W - 2.0 * MARGIN);
    let sy = |v: f64| H - MARGIN - (v - y.0) / (y.1 - y.0) * (H - 2.0 * MARGIN);
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, x, y);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> =
            s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars, one per label, with a zero line.
pub fn bar_plot(title: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let y = bounds(bars.iter().map(|b| b.1).chain([0.0]));
    let n = bars.len().max(1) as f64;
    let sy = |v: f64| H - MARGIN - (v - y.0) / (y.1 - y.0) * (H - 2.0 * MARGIN);
    let mut out = String::new();
    frame(&mut out, title, "", ylabel, (0.0, n), y);
    let slot = (W - 2.0 * MARGIN) / n;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x0 = MARGIN + i as f64 * slot + 0.1 * slot;
        let (top, bottom) = (sy(v.max(0.0)), sy(v.min(0.0)));
        let color = if *v >= 0.0 { COLORS[1] } else { COLORS[0] };
        let _ = writeln!(out, r#"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#, 0.8 * slot, bottom - top);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="8">{}</text>"#,
            x0 + 0.4 * slot,
            H - MARGIN + 26.0,
            escape(label)
        );
    }
    let _ = writeln!(out, r##"<line x1="{MARGIN}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#000"/>"##, sy(0.0), W - MARGIN, sy(0.0));
    out.push_str("</svg>\n");
    out
}
