//! Minimal scatter plots: circles plus a frame with axis ticks. Only the
//! first two coordinates are drawn; 1-D points sit on `y = 0`.

use std::fmt::Write as _;

use ndarray::Array2;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One named point cloud.
pub struct Layer<'a> {
    pub name: &'a str,
    pub points: &'a Array2<f64>,
}

fn xy(points: &Array2<f64>, i: usize) -> (f64, f64) {
    let x = points[[i, 0]];
    let y = if points.ncols() > 1 { points[[i, 1]] } else { 0.0 };
    (x, y)
}

fn bounds(layers: &[Layer<'_>]) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for l in layers {
        if l.points.ncols() == 0 {
            continue;
        }
        for i in 0..l.points.nrows() {
            let (x, y) = xy(l.points, i);
            if x.is_finite() && y.is_finite() {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if !x0.is_finite() {
        return (-1.0, 1.0, -1.0, 1.0);
    }
    // Square aspect with a little padding.
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let half = ((x1 - x0).max(y1 - y0) / 2.0).max(1e-9) * 1.05;
    (cx - half, cx + half, cy - half, cy + half)
}

pub fn render(title: &str, layers: &[Layer<'_>]) -> String {
    let (x0, x1, y0, y1) = bounds(layers);
    let span = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * span;
    let py = |y: f64| SIZE - MARGIN - (y - y0) / (y1 - y0) * span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (vx, vy) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (tx, ty) = (px(vx), py(vy));
        let _ = writeln!(
            s,
            r#"<line x1="{tx:.2}" y1="{}" x2="{tx:.2}" y2="{}" stroke="black"/>"#,
            SIZE - MARGIN,
            SIZE - MARGIN + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{tx:.2}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{vx:.2}</text>"#,
            SIZE - MARGIN + 15.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ty:.2}" x2="{MARGIN}" y2="{ty:.2}" stroke="black"/>"#,
            MARGIN - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{vy:.2}</text>"#,
            MARGIN - 6.0,
            ty + 3.0
        );
    }
    for (k, l) in layers.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<g fill="{color}" fill-opacity="0.5">"#);
        if l.points.ncols() > 0 {
            for i in 0..l.points.nrows() {
                let (x, y) = xy(l.points, i);
                if x.is_finite() && y.is_finite() {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, px(x), py(y));
                }
            }
        }
        let _ = writeln!(s, "</g>");
        let ly = MARGIN + 14.0 * (k as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            MARGIN + 6.0,
            escape(l.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_circle_per_finite_point() {
        let a = array![[0.0, 0.0], [1.0, 2.0], [f64::NAN, 0.0]];
        let b = array![[3.0], [4.0]];
        let svg = render(
            "a < b",
            &[Layer { name: "a", points: &a }, Layer { name: "b", points: &b }],
        );
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_layers_still_render() {
        let e = Array2::<f64>::zeros((0, 2));
        let svg = render("empty", &[Layer { name: "e", points: &e }]);
        assert_eq!(svg.matches("<circle").count(), 0);
    }
}
