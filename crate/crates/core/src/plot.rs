//! Standalone SVG charts for hue histograms and coverage traces.

use std::fmt::Write as _;

use crate::metrics::{hue_saturation, HueHistogram};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 240.0;
const MARGIN: f64 = 30.0;

fn hsv_to_hex(hue: f64) -> String {
    let c = 1.0;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    debug_assert!((hue_saturation([r, g, b]).0 - hue).abs() < 1.0);
    format!("#{:02x}{:02x}{:02x}", (r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

/// One bar per hue degree, colored by its hue, height = weight.
pub fn hue_histogram_svg(hist: &HueHistogram) -> String {
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = (WIDTH - 2.0 * MARGIN) / hist.weights.len().max(1) as f64;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (i, w) in hist.weights.iter().enumerate() {
        let h = w * plot_h;
        writeln!(
            s,
            r#"<rect class="bin" data-bin="{i}" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
            MARGIN + i as f64 * bar_w,
            HEIGHT - MARGIN - h,
            bar_w,
            h,
            hsv_to_hex(i as f64)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = HEIGHT - MARGIN,
        x2 = WIDTH - MARGIN
    )
    .unwrap();
    writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="12">hue (degrees), sqrt-normalized count</text>"#, HEIGHT - 8.0).unwrap();
    s.push_str("</svg>\n");
    s
}

/// Covered fraction after each base-view pick, as a polyline with markers.
pub fn coverage_svg(covered_fraction: &[f64]) -> String {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let n = covered_fraction.len();
    let x_at = |i: usize| MARGIN + if n > 1 { plot_w * i as f64 / (n - 1) as f64 } else { plot_w / 2.0 };
    let y_at = |v: f64| HEIGHT - MARGIN - v.clamp(0.0, 1.0) * plot_h;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let points: Vec<String> = covered_fraction
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.3},{:.3}", x_at(i), y_at(v)))
        .collect();
    writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, points.join(" ")).unwrap();
    for (i, &v) in covered_fraction.iter().enumerate() {
        writeln!(
            s,
            r#"<circle class="pick" data-k="{}" cx="{:.3}" cy="{:.3}" r="4" fill="steelblue"><title>{v:.4}</title></circle>"#,
            i + 1,
            x_at(i),
            y_at(v)
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="12">base views selected vs. covered fraction of splats</text>"#, HEIGHT - 8.0).unwrap();
    s.push_str("</svg>\n");
    s
}
