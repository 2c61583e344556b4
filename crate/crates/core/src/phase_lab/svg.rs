//! SVG heatmaps of a phase grid.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::contour::contour_segments;
use super::{Channel, PhaseGrid};
use crate::error::{invalid, Result};
use crate::fmt::fmt_sig;

pub const CONTOUR_LEVELS: [f64; 2] = [0.47, 0.53];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStyle {
    pub cell_size: f64,
    pub margin: f64,
    pub contours: bool,
    pub title: Option<String>,
}

impl Default for HeatmapStyle {
    fn default() -> Self {
        Self {
            cell_size: 20.0,
            margin: 70.0,
            contours: true,
            title: None,
        }
    }
}

// Viridis sampled at five points.
const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

fn color(c: f64) -> String {
    let c = c.clamp(0.0, 1.0);
    let i = STOPS.iter().rposition(|s| s.0 <= c).unwrap_or(0).min(STOPS.len() - 2);
    let (t0, a) = STOPS[i];
    let (t1, b) = STOPS[i + 1];
    let f = (c - t0) / (t1 - t0);
    let ch = |k: usize| (a[k] + f * (b[k] - a[k])).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(0), ch(1), ch(2))
}

fn short(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

/// Cells are drawn on equal-width columns and rows, which places both
/// log-spaced axes on a logarithmic scale. Sparsity increases upwards.
pub fn render_heatmap(grid: &PhaseGrid, channel: Channel, style: &HeatmapStyle) -> Result<String> {
    let (nv, np) = (grid.importance_axis().len(), grid.sparsity_axis().len());
    if nv == 0 || np == 0 || !grid.has_channel(channel) {
        return Err(invalid(format!("grid has no {channel:?} values to draw")));
    }
    let cs = style.cell_size;
    let m = style.margin;
    let (plot_w, plot_h) = (nv as f64 * cs, np as f64 * cs);
    let (width, height) = (plot_w + 1.5 * m + 60.0, plot_h + 2.0 * m);
    let x_of = |iv: f64| m + (iv + 0.5) * cs;
    let y_of = |ip: f64| m + plot_h - (ip + 0.5) * cs;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let title = style.title.clone().unwrap_or_else(|| {
        let meta = grid.meta();
        format!(
            "C1 ({:?}), {} {}, N={} D={}",
            channel,
            meta.nonlinearity.as_str(),
            meta.family.as_str(),
            meta.n,
            meta.d
        )
    });
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13">{}</text>"#, m, m / 2.0, title);

    let _ = writeln!(s, r#"<g class="cells">"#);
    for ip in 0..np {
        for iv in 0..nv {
            let cell = grid.cell(iv, ip);
            let fill = cell.get(channel).map(color).unwrap_or_else(|| "#cccccc".into());
            let label = cell.get(channel).map(fmt_sig).unwrap_or_else(|| "missing".into());
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cs}" height="{cs}" fill="{fill}"><title>V={} p={} C1={label}</title></rect>"#,
                m + iv as f64 * cs,
                m + plot_h - (ip + 1) as f64 * cs,
                fmt_sig(grid.importance_axis()[iv]),
                fmt_sig(grid.sparsity_axis()[ip]),
            );
        }
    }
    let _ = writeln!(s, "</g>");

    if style.contours {
        for (level, dash) in CONTOUR_LEVELS.iter().zip(["", r#" stroke-dasharray="4,2""#]) {
            let _ = writeln!(s, r#"<g class="contour" data-level="{level}" stroke="white" stroke-width="1.5" fill="none"{dash}>"#);
            for seg in contour_segments(grid, channel, *level) {
                let (a, b) = (seg.start.position(), seg.end.position());
                let _ = writeln!(
                    s,
                    r#"<polyline points="{:.2},{:.2} {:.2},{:.2}"/>"#,
                    x_of(a.0),
                    y_of(a.1),
                    x_of(b.0),
                    y_of(b.1)
                );
            }
            let _ = writeln!(s, "</g>");
        }
    }

    // Axes: label roughly six ticks per axis.
    let _ = writeln!(s, r#"<g class="axes" stroke="black">"#);
    let _ = writeln!(s, r#"<rect x="{m}" y="{m}" width="{plot_w}" height="{plot_h}" fill="none"/>"#);
    let _ = writeln!(s, "</g>");
    let step_v = nv.div_ceil(6).max(1);
    for iv in (0..nv).step_by(step_v) {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x_of(iv as f64),
            m + plot_h + 14.0,
            short(grid.importance_axis()[iv])
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">relative importance V (log scale)</text>"#,
        m + plot_w / 2.0,
        m + plot_h + 32.0
    );
    let step_p = np.div_ceil(6).max(1);
    let kurt = grid.kurtosis_axis();
    for ip in (0..np).step_by(step_p) {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">p={} k={}</text>"#,
            m - 4.0,
            y_of(ip as f64) + 3.0,
            short(grid.sparsity_axis()[ip]),
            short(kurt[ip])
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" transform="rotate(-90 12 {:.1})" text-anchor="middle">sparsity p (log scale), k = 9/(5p)</text>"#,
        m + plot_h / 2.0,
        m + plot_h / 2.0
    );

    // Colour bar.
    let bx = m + plot_w + 20.0;
    for i in 0..20 {
        let c = (i as f64 + 0.5) / 20.0;
        let _ = writeln!(
            s,
            r#"<rect x="{bx}" y="{:.1}" width="12" height="{:.1}" fill="{}"/>"#,
            m + plot_h * (1.0 - (i + 1) as f64 / 20.0),
            plot_h / 20.0,
            color(c)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">1</text>"#, bx + 16.0, m + 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">0</text>"#, bx + 16.0, m + plot_h);
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_lab::{analytic_phase_grid, default_importance_axis, default_sparsity_axis};

    #[test]
    fn colour_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(2.0), "#fde725");
    }

    #[test]
    fn single_cell() {
        let g = analytic_phase_grid(6, 3, &[1.0], &[0.1]).unwrap();
        let svg = render_heatmap(&g, Channel::Analytic, &HeatmapStyle::default()).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 1 + 1 + 20);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn missing_channel_is_an_error() {
        let g = analytic_phase_grid(6, 3, &[1.0], &[0.1]).unwrap();
        assert!(render_heatmap(&g, Channel::Empirical, &HeatmapStyle::default()).is_err());
    }

    #[test]
    fn analytic_grid_has_both_contours() {
        let g = analytic_phase_grid(6, 3, &default_importance_axis(), &default_sparsity_axis()).unwrap();
        let svg = render_heatmap(&g, Channel::Analytic, &HeatmapStyle::default()).unwrap();
        assert!(svg.contains(r#"data-level="0.47""#) && svg.contains(r#"data-level="0.53""#));
        assert!(svg.matches("<polyline").count() > 10);
    }
}
