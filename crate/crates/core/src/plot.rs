//! Minimal SVG rendering of planar barrier functions.

use std::fmt::Write as _;

use crate::cpa::{CpaError, CpaFunction};
use crate::geometry::Point;

#[derive(Debug, Clone)]
pub struct PlotOptions {
    /// Output width in pixels; height follows the aspect ratio.
    pub width: f64,
    pub show_mesh: bool,
    pub trajectories: Vec<Vec<Point>>,
    /// Extra markers, e.g. points inserted by refinement.
    pub markers: Vec<Point>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions { width: 640.0, show_mesh: true, trajectories: vec![], markers: vec![] }
    }
}

/// Blue for negative values, red for positive, white at zero.
fn color(w: f64, scale: f64) -> String {
    let t = (w / scale).clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let s = -t;
        (255.0 * (1.0 - s), 255.0 * (1.0 - 0.6 * s), 255.0)
    } else {
        (255.0, 255.0 * (1.0 - 0.7 * t), 255.0 * (1.0 - 0.7 * t))
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Render simplices colored by their mean vertex value, the zero level set,
/// and optional trajectories and markers.
pub fn render_svg(w: &CpaFunction, opts: &PlotOptions) -> Result<String, CpaError> {
    let tri = w.triangulation();
    if tri.dim() != 2 {
        return Err(CpaError::UnsupportedDimension(tri.dim()));
    }
    let (lo, hi) = tri.bounding_box();
    let span_x = (hi[0] - lo[0]).max(f64::MIN_POSITIVE);
    let span_y = (hi[1] - lo[1]).max(f64::MIN_POSITIVE);
    let pad = 10.0;
    let scale = (opts.width - 2.0 * pad) / span_x;
    let height = span_y * scale + 2.0 * pad;
    let map = |p: &[f64]| (pad + (p[0] - lo[0]) * scale, height - pad - (p[1] - lo[1]) * scale);
    let vscale = w.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.2} {:.2}">"#,
        opts.width, height, opts.width, height
    );
    let stroke = if opts.show_mesh { r##"stroke="#bbbbbb" stroke-width="0.4""## } else { r#"stroke="none""# };
    for (i, s) in tri.simplices().iter().enumerate() {
        let ids = s.vertex_ids();
        let mean = ids.iter().map(|&v| w.values()[v]).sum::<f64>() / ids.len() as f64;
        let pts: Vec<String> = ids
            .iter()
            .map(|&v| {
                let (x, y) = map(tri.vertex(v));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon data-simplex="{i}" points="{}" fill="{}" {stroke}/>"#,
            pts.join(" "),
            color(mean, vscale)
        );
    }
    for seg in w.zero_level_set()? {
        let (x1, y1) = map(&seg.start);
        let (x2, y2) = map(&seg.end);
        let _ = writeln!(
            svg,
            r##"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#1f4e9c" stroke-width="2"/>"##
        );
    }
    for traj in &opts.trajectories {
        let pts: Vec<String> = traj
            .iter()
            .map(|p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#333333" stroke-width="0.8"/>"##,
            pts.join(" ")
        );
    }
    for m in &opts.markers {
        let (x, y) = map(m);
        let _ = writeln!(svg, r##"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="#d62728"/>"##);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
