//! Layered SVG rendering of parameter-plane rasters and curves.
//!
//! The document stacks, in order: raster cells (one `rect` per cell,
//! colored by integer class, with a reserved hatch for unresolved cells),
//! analytic curve overlays, point markers (e.g. the cusp), axes, and a
//! legend. An empty raster yields a legend-only document so a render never
//! fails. Output is a plain string: deterministic, no external resources.

use std::fmt::Write as _;

use crate::io::{CurveTrace, RasterTable};

/// Canvas proportions and the parameter rectangle to draw.
#[derive(Debug, Clone, Copy)]
pub struct Style {
    pub width: f64,
    pub height: f64,
    /// Left/bottom margin holding the axis labels.
    pub margin: f64,
    /// Extra width on the right holding the legend.
    pub legend_width: f64,
}

impl Default for Style {
    fn default() -> Self {
        Style {
            width: 840.0,
            height: 600.0,
            margin: 56.0,
            legend_width: 180.0,
        }
    }
}

/// A labeled point marker (drawn as a cross).
#[derive(Debug, Clone)]
pub struct Marker {
    pub label: String,
    pub mu1: f64,
    pub mu2: f64,
}

/// What a legend row shows: a raster class swatch (`None` = the unresolved
/// hatch) or a curve color sample.
#[derive(Debug, Clone)]
pub enum Paint {
    Cell(Option<i64>),
    Line(String),
}

#[derive(Debug, Clone)]
pub struct LegendEntry {
    pub label: String,
    pub paint: Paint,
}

/// Fill color for a raster class code. Codes 0–7 use a fixed palette; the
/// open-ended codes (e.g. per-homology-type classes) hash to a hue, so any
/// code always renders the same color.
pub fn color_for_code(code: i64) -> String {
    const BASE: [&str; 8] = [
        "#f2f0e9", "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1",
    ];
    if (0..8).contains(&code) {
        BASE[code as usize].to_string()
    } else {
        let h = (code.wrapping_mul(47)).rem_euclid(360);
        format!("hsl({h},62%,55%)")
    }
}

/// Stroke color for the `i`-th curve overlay.
pub fn curve_color(i: usize) -> &'static str {
    const LINE: [&str; 6] = [
        "#1f1f1f", "#b2182b", "#2166ac", "#35978f", "#762a83", "#e08214",
    ];
    LINE[i % LINE.len()]
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Frame {
    fn x(&self, mu1: f64) -> f64 {
        self.x0 + (mu1 - self.lo[0]) / (self.hi[0] - self.lo[0]) * self.w
    }
    /// SVG y grows downward; parameter `mu2` grows upward.
    fn y(&self, mu2: f64) -> f64 {
        self.y0 + self.h - (mu2 - self.lo[1]) / (self.hi[1] - self.lo[1]) * self.h
    }
}

fn data_bounds(raster: Option<&RasterTable>, curves: &[CurveTrace]) -> ([f64; 2], [f64; 2]) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    if let Some(t) = raster {
        if !t.cells.is_empty() {
            // Pad by half a cell so edge cells are drawn in full.
            let sx = if t.nx > 1 {
                (t.hi[0] - t.lo[0]) / (t.nx - 1) as f64
            } else {
                1.0
            };
            let sy = if t.ny > 1 {
                (t.hi[1] - t.lo[1]) / (t.ny - 1) as f64
            } else {
                1.0
            };
            // The raster alone fixes the viewport; curves are clipped to it.
            return (
                [t.lo[0] - 0.5 * sx, t.lo[1] - 0.5 * sy],
                [t.hi[0] + 0.5 * sx, t.hi[1] + 0.5 * sy],
            );
        }
    }
    for c in curves {
        for &(m1, m2) in &c.points {
            lo[0] = lo[0].min(m1);
            lo[1] = lo[1].min(m2);
            hi[0] = hi[0].max(m1);
            hi[1] = hi[1].max(m2);
        }
    }
    if !lo[0].is_finite() || lo[0] >= hi[0] || lo[1] >= hi[1] {
        ([0.0, 0.0], [1.0, 1.0])
    } else {
        (lo, hi)
    }
}

fn fmt_tick(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Render a layered SVG document. Any of the raster, curve list, marker
/// list, or legend may be empty; an entirely empty input still produces a
/// valid (legend-only) document.
pub fn render_svg(
    raster: Option<&RasterTable>,
    curves: &[CurveTrace],
    markers: &[Marker],
    legend: &[LegendEntry],
    style: &Style,
) -> String {
    let (lo, hi) = data_bounds(raster, curves);
    let frame = Frame {
        x0: style.margin,
        y0: 20.0,
        w: style.width - style.margin - style.legend_width - 20.0,
        h: style.height - style.margin - 20.0,
        lo,
        hi,
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="monospace" font-size="12">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(
        s,
        r##"<defs><pattern id="unresolved" patternUnits="userSpaceOnUse" width="6" height="6"><rect width="6" height="6" fill="#d9d9d9"/><path d="M0 6 L6 0" stroke="#7a7a7a" stroke-width="1.2"/></pattern><clipPath id="plot"><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/></clipPath></defs>"##,
        frame.x0, frame.y0, frame.w, frame.h
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let _ = writeln!(s, r#"<g id="raster" clip-path="url(#plot)">"#);
    if let Some(t) = raster {
        let cw = frame.w / t.nx.max(1) as f64;
        let ch = frame.h / t.ny.max(1) as f64;
        for &(m1, m2, code) in &t.cells {
            let fill = match code {
                Some(c) => color_for_code(c),
                None => "url(#unresolved)".to_string(),
            };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                frame.x(m1) - 0.5 * cw,
                frame.y(m2) - 0.5 * ch,
                cw + 0.05,
                ch + 0.05,
                fill
            );
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="curves" clip-path="url(#plot)" fill="none">"#);
    for (i, c) in curves.iter().enumerate() {
        let pts: String = c
            .points
            .iter()
            .map(|&(m1, m2)| format!("{:.2},{:.2}", frame.x(m1), frame.y(m2)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-label="{}" points="{}" stroke="{}" stroke-width="1.6"/>"#,
            c.label,
            pts,
            curve_color(i)
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r##"<g id="markers" stroke="#111111" stroke-width="1.6">"##);
    for m in markers {
        let (x, y) = (frame.x(m.mu1), frame.y(m.mu2));
        let _ = writeln!(
            s,
            r#"<path class="marker" d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}"/><text x="{:.2}" y="{:.2}" stroke="none">{}</text>"#,
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0,
            x + 8.0,
            y - 8.0,
            m.label
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="axes">"#);
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333333"/>"##,
        frame.x0, frame.y0, frame.w, frame.h
    );
    let yb = frame.y0 + frame.h;
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" text-anchor="middle">mu1</text>"#,
        frame.x0,
        yb + 16.0,
        fmt_tick(lo[0]),
        frame.x0 + frame.w,
        yb + 16.0,
        fmt_tick(hi[0]),
        frame.x0 + 0.5 * frame.w,
        yb + 32.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text><text x="{:.2}" y="{:.2}" text-anchor="end">mu2</text>"#,
        frame.x0 - 6.0,
        yb,
        fmt_tick(lo[1]),
        frame.x0 - 6.0,
        frame.y0 + 10.0,
        fmt_tick(hi[1]),
        frame.x0 - 6.0,
        frame.y0 + 0.5 * frame.h
    );
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="legend">"#);
    let lx = style.width - style.legend_width + 8.0;
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-weight="bold">legend</text>"#,
        lx, 32.0
    );
    for (i, e) in legend.iter().enumerate() {
        let y = 48.0 + 20.0 * i as f64;
        match &e.paint {
            Paint::Cell(code) => {
                let fill = match code {
                    Some(c) => color_for_code(*c),
                    None => "url(#unresolved)".to_string(),
                };
                let _ = writeln!(
                    s,
                    r##"<rect x="{lx:.2}" y="{:.2}" width="14" height="14" fill="{}" stroke="#333333" stroke-width="0.5"/>"##,
                    y - 11.0,
                    fill
                );
            }
            Paint::Line(color) => {
                let _ = writeln!(
                    s,
                    r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
                    y - 4.0,
                    lx + 14.0,
                    y - 4.0,
                    color
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}">{}</text>"#,
            lx + 20.0,
            e.label
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_raster() -> RasterTable {
        RasterTable {
            header: "mu1,mu2,code".to_string(),
            nx: 2,
            ny: 2,
            lo: [-0.1, -0.2],
            hi: [0.1, 0.2],
            cells: vec![
                (-0.1, -0.2, Some(4)),
                (0.1, -0.2, Some(0)),
                (-0.1, 0.2, None),
                (0.1, 0.2, Some(2)),
            ],
        }
    }

    #[test]
    fn empty_inputs_yield_a_legend_only_document() {
        let legend = vec![LegendEntry {
            label: "no data".to_string(),
            paint: Paint::Cell(Some(0)),
        }];
        let svg = render_svg(None, &[], &[], &legend, &Style::default());
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("no data"));
        assert!(!svg.contains(r#"class="cell""#));
        assert!(!svg.contains(r#"class="curve""#));
    }

    #[test]
    fn raster_curves_and_markers_are_layered_with_hatched_unresolved_cells() {
        let raster = demo_raster();
        let curves = vec![CurveTrace {
            label: "outer".to_string(),
            points: vec![(-0.1, -0.2), (0.0, 0.0), (0.1, 0.2)],
        }];
        let markers = vec![Marker {
            label: "cusp".to_string(),
            mu1: 0.0,
            mu2: 0.0,
        }];
        let legend = vec![
            LegendEntry {
                label: "4 equilibria".to_string(),
                paint: Paint::Cell(Some(4)),
            },
            LegendEntry {
                label: "unresolved".to_string(),
                paint: Paint::Cell(None),
            },
        ];
        let svg = render_svg(Some(&raster), &curves, &markers, &legend, &Style::default());
        assert_eq!(svg.matches(r#"class="cell""#).count(), 4);
        assert_eq!(svg.matches("url(#unresolved)").count(), 2);
        assert!(svg.contains(r#"data-label="outer""#));
        assert!(svg.contains(r#"class="marker""#));
        let raster_at = svg.find(r#"<g id="raster""#).unwrap();
        let curves_at = svg.find(r#"<g id="curves""#).unwrap();
        let legend_at = svg.find(r#"<g id="legend""#).unwrap();
        assert!(raster_at < curves_at && curves_at < legend_at);
    }

    #[test]
    fn the_vertical_axis_is_flipped_and_codes_have_stable_colors() {
        let raster = demo_raster();
        let style = Style::default();
        let svg = render_svg(Some(&raster), &[], &[], &[], &style);
        // The high-mu2 unresolved cell must sit above (smaller y) the
        // low-mu2 cells; cells are emitted in row-major order.
        let ys: Vec<f64> = svg
            .match_indices(r#"class="cell""#)
            .map(|(at, _)| {
                let rest = &svg[at..];
                let yfield = rest.split(" y=\"").nth(1).unwrap();
                yfield.split('"').next().unwrap().parse::<f64>().unwrap()
            })
            .collect();
        assert!(ys[2] < ys[0]);
        assert_ne!(color_for_code(0), color_for_code(4));
        assert_eq!(color_for_code(102), color_for_code(102));
        assert!(color_for_code(116).starts_with("hsl("));
    }
}
