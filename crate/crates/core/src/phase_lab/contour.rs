//! Marching squares on the cell lattice.
//!
//! Lattice point `(iv, ip)` carries the value of cell `(iv, ip)`. A contour
//! at `level` crosses the edge between two lattice points whose values lie on
//! opposite sides (`value >= level` versus `value < level`), at the linearly
//! interpolated position.

use serde::{Deserialize, Serialize};

use super::{Channel, PhaseGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub from: (usize, usize),
    pub to: (usize, usize),
    /// Fraction of the way from `from` to `to`.
    pub t: f64,
}

impl ContourPoint {
    /// Position in lattice coordinates `(iv, ip)`.
    pub fn position(&self) -> (f64, f64) {
        let lerp = |a: usize, b: usize| a as f64 + self.t * (b as f64 - a as f64);
        (lerp(self.from.0, self.to.0), lerp(self.from.1, self.to.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSegment {
    pub start: ContourPoint,
    pub end: ContourPoint,
}

/// Contour segments of `channel` at `level`. Squares with a missing corner are skipped.
pub fn contour_segments(grid: &PhaseGrid, channel: Channel, level: f64) -> Vec<ContourSegment> {
    let (nv, np) = (grid.importance_axis().len(), grid.sparsity_axis().len());
    let mut out = Vec::new();
    if nv < 2 || np < 2 {
        return out;
    }
    let value = |p: (usize, usize)| grid.cell(p.0, p.1).get(channel);
    for ip in 0..np - 1 {
        for iv in 0..nv - 1 {
            let corners = [(iv, ip), (iv + 1, ip), (iv + 1, ip + 1), (iv, ip + 1)];
            let Some(vals) = corners.iter().map(|&c| value(c)).collect::<Option<Vec<f64>>>() else {
                continue;
            };
            let above: Vec<bool> = vals.iter().map(|&x| x >= level).collect();
            // Edges in order: bottom, right, top, left.
            let crossings: Vec<ContourPoint> = (0..4)
                .filter(|&e| above[e] != above[(e + 1) % 4])
                .map(|e| {
                    let (a, b) = (e, (e + 1) % 4);
                    ContourPoint {
                        from: corners[a],
                        to: corners[b],
                        t: (level - vals[a]) / (vals[b] - vals[a]),
                    }
                })
                .collect();
            match crossings.len() {
                2 => out.push(ContourSegment {
                    start: crossings[0],
                    end: crossings[1],
                }),
                4 => {
                    // Saddle: the centre value decides which corners connect.
                    let centre = vals.iter().sum::<f64>() / 4.0 >= level;
                    let pairs = if centre == above[0] { [(0, 1), (2, 3)] } else { [(3, 0), (1, 2)] };
                    for (a, b) in pairs {
                        out.push(ContourSegment {
                            start: crossings[a],
                            end: crossings[b],
                        });
                    }
                }
                _ => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_lab::{analytic_phase_grid, default_importance_axis, default_sparsity_axis, Cell, GridMeta};
    use crate::toy_models::{ModelFamily, Nonlinearity};

    fn grid_from(values: &[f64], nv: usize) -> PhaseGrid {
        let np = values.len() / nv;
        let cells = values
            .iter()
            .map(|&c| Cell {
                c1_empirical: Some(c),
                ..Cell::default()
            })
            .collect();
        let axis = |n: usize| (1..=n).map(|i| i as f64 / n as f64).collect::<Vec<_>>();
        let meta = GridMeta {
            n: 6,
            d: 3,
            family: ModelFamily::Regression,
            nonlinearity: Nonlinearity::Quadratic,
            config_hash: String::new(),
        };
        PhaseGrid::new(axis(nv), axis(np), cells, meta).unwrap()
    }

    #[test]
    fn single_square_corner() {
        let g = grid_from(&[0.0, 1.0, 0.0, 0.0], 2);
        let segs = contour_segments(&g, Channel::Empirical, 0.5);
        assert_eq!(segs.len(), 1);
        let (a, b) = (segs[0].start.position(), segs[0].end.position());
        assert_eq!(a, (0.5, 0.0));
        assert_eq!(b, (1.0, 0.5));
    }

    #[test]
    fn saddle_gives_two_segments() {
        let g = grid_from(&[1.0, 0.0, 0.0, 1.0], 2);
        assert_eq!(contour_segments(&g, Channel::Empirical, 0.5).len(), 2);
    }

    #[test]
    fn flat_grid_has_no_contour() {
        let g = grid_from(&[0.3; 9], 3);
        assert!(contour_segments(&g, Channel::Empirical, 0.47).is_empty());
        assert!(contour_segments(&g, Channel::Analytic, 0.47).is_empty());
    }

    #[test]
    fn crossed_edges_straddle_the_level() {
        let g = analytic_phase_grid(6, 3, &default_importance_axis(), &default_sparsity_axis()).unwrap();
        for level in [0.47, 0.53] {
            let segs = contour_segments(&g, Channel::Analytic, level);
            assert!(!segs.is_empty());
            for s in segs {
                for p in [s.start, s.end] {
                    let a = g.cell(p.from.0, p.from.1).c1_analytic.unwrap();
                    let b = g.cell(p.to.0, p.to.1).c1_analytic.unwrap();
                    assert!((a >= level) != (b >= level));
                    assert!((0.0..=1.0).contains(&p.t));
                }
            }
        }
    }
}
