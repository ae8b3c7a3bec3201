//! Bare SVG rendering for quick looks at the data files.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a [f64; 2]>) -> Self {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for p in points {
            f.x0 = f.x0.min(p[0]);
            f.x1 = f.x1.max(p[0]);
            f.y0 = f.y0.min(p[1]);
            f.y1 = f.y1.max(p[1]);
        }
        if !(f.x1 > f.x0) {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        if !(f.y1 > f.y0) {
            f.y0 -= 0.5;
            f.y1 += 0.5;
        }
        f
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let sx = (WIDTH - 2.0 * MARGIN) / (self.x1 - self.x0);
        let sy = (HEIGHT - 2.0 * MARGIN) / (self.y1 - self.y0);
        (MARGIN + (p[0] - self.x0) * sx, HEIGHT - MARGIN - (p[1] - self.y0) * sy)
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

/// Closed polylines, one colour per group.
pub fn polygons(groups: &[Vec<Vec<[f64; 2]>>]) -> String {
    let frame = Frame::fit(groups.iter().flatten().flatten());
    let mut out = String::new();
    header(&mut out);
    for (g, polys) in groups.iter().enumerate() {
        let color = COLORS[g % COLORS.len()];
        for poly in polys {
            let pts: Vec<String> = poly
                .iter()
                .map(|&p| {
                    let (x, y) = frame.map(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="none" stroke="{color}" stroke-width="1"/>"#,
                pts.join(" ")
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Overlaid histograms sharing bin edges.
pub fn histograms(edges: &[f64], series: &[(&str, Vec<usize>)]) -> String {
    let lo = edges[0];
    let hi = edges[edges.len() - 1];
    let peak = series.iter().flat_map(|(_, c)| c.iter()).copied().max().unwrap_or(1).max(1) as f64;
    let frame = Frame::fit([[lo, 0.0], [hi, peak]].iter());
    let mut out = String::new();
    header(&mut out);
    for (s, (label, counts)) in series.iter().enumerate() {
        let color = COLORS[s % COLORS.len()];
        for (i, &c) in counts.iter().enumerate() {
            let (x0, y0) = frame.map([edges[i], c as f64]);
            let (x1, y1) = frame.map([edges[i + 1], 0.0]);
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.4"/>"#,
                (x1 - x0).max(0.0),
                (y1 - y0).max(0.0)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}" font-size="12">{label}</text>"#,
            MARGIN + 8.0,
            MARGIN + 16.0 * (s as f64 + 1.0)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_svg_is_well_formed() {
        let svg = polygons(&[vec![vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polygon").count(), 1);
    }

    #[test]
    fn histogram_svg_has_one_bar_per_bin() {
        let svg = histograms(&[0.0, 1.0, 2.0], &[("a", vec![1, 2]), ("b", vec![0, 3])]);
        assert_eq!(svg.matches("<rect x=").count(), 4);
    }
}
