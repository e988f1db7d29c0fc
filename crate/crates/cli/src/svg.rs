//! Minimal SVG emitters for heatmaps and box plots.

use std::fmt::Write;

use nalgebra::DMatrix;
use shapecov::simulation::Quartiles;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Diverging blue–white–red colour for `v ∈ [-1, 1]`.
fn colour(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Heatmap of a square matrix, colour scaled by the largest off-diagonal magnitude.
/// `order` permutes rows and columns; `labels` name the original indices.
pub fn heatmap(m: &DMatrix<f64>, labels: &[String], order: &[usize], title: &str) -> String {
    let n = m.nrows();
    let cell = 24.0;
    let margin = 90.0;
    let size = margin + cell * n as f64 + 20.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                scale = scale.max(m[(i, j)].abs());
            }
        }
    }
    if scale == 0.0 {
        scale = 1.0;
    }
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{:.0}">"#, size + 20.0);
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    for (a, &i) in order.iter().enumerate() {
        let y = margin + cell * a as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#, margin - 4.0, y + 16.0, escape(&labels[i]));
        for (b, &j) in order.iter().enumerate() {
            let x = margin + cell * b as f64;
            let v = if i == j { 0.0 } else { m[(i, j)] / scale };
            let _ = writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}"/>"#, colour(v));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Box plot of labelled quartile summaries with an optional horizontal reference line.
pub fn boxplot(groups: &[(String, Quartiles)], threshold: Option<f64>, title: &str) -> String {
    let width = 80.0 + 70.0 * groups.len() as f64;
    let height = 300.0;
    let top = 40.0;
    let bottom = height - 40.0;
    let vmax = groups.iter().map(|(_, q)| q.max).chain(threshold).fold(0.0f64, f64::max).max(1e-12) * 1.05;
    let y = |v: f64| bottom - (bottom - top) * v / vmax;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}">"#);
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(s, r#"<line x1="50" y1="{top}" x2="50" y2="{bottom}" stroke="black"/>"#);
    for (k, (label, q)) in groups.iter().enumerate() {
        let cx = 90.0 + 70.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{:.2}" x2="{cx:.1}" y2="{:.2}" stroke="black"/>"#, y(q.min), y(q.max));
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.2}" width="40" height="{:.2}" fill="lightsteelblue" stroke="black"/>"#, cx - 20.0, y(q.q3), y(q.q1) - y(q.q3));
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="black" stroke-width="2"/>"#, cx - 20.0, y(q.median), cx + 20.0, y(q.median));
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#, bottom + 18.0, escape(label));
    }
    if let Some(t) = threshold {
        let _ = writeln!(s, r#"<line x1="50" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="red" stroke-dasharray="4 3"/>"#, y(t), width - 10.0, y(t));
    }
    s.push_str("</svg>\n");
    s
}
