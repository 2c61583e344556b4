//! Phase diagrams over relative importance `V` and sparsity `p`.
//!
//! Feature 1 has importance `V` and the other `N − 1` features importance 1.
//! Each grid cell records the capacity `C_1` of feature 1, either from the
//! analytic optimum of the quadratic model or from a trained toy model.
//! Cells are stored with `p` as the outer (row) index and `V` as the inner.

mod contour;
mod svg;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fmt::{fmt_sig, round_sig};
use crate::quadratic::{solve_allocation, ImportanceVector, Phase};
use crate::toy_models::{kurtosis_of, ModelFamily, Nonlinearity};

pub use contour::{contour_segments, ContourPoint, ContourSegment};
pub use svg::{render_heatmap, HeatmapStyle, CONTOUR_LEVELS};
pub use sweep::{config_hash, empirical_phase_grid, CellFilter, CheckpointRecord, SweepOptions};

pub const CSV_HEADER: &str = "V,p,k,C1_analytic,C1_empirical,phase";

/// Default importance axis: 25 points from 10⁻² to 10².
pub fn default_importance_axis() -> Vec<f64> {
    log_axis(1e-2, 1e2, 25).expect("valid range")
}

/// Default sparsity axis: 25 points from 0.01 to 1.
pub fn default_sparsity_axis() -> Vec<f64> {
    log_axis(1e-2, 1.0, 25).expect("valid range")
}

/// `count` log-spaced points from `lo` to `hi`, rounded to 12 significant digits.
pub fn log_axis(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) || count == 0 {
        return Err(invalid(format!("log axis needs 0 < lo < hi and count >= 1, got [{lo}, {hi}] x {count}")));
    }
    if count == 1 {
        return Ok(vec![round_sig(lo)]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| {
            let x = match i {
                0 => lo,
                _ if i == count - 1 => hi,
                _ => (a + (b - a) * i as f64 / (count - 1) as f64).exp(),
            };
            round_sig(x)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub c1_analytic: Option<f64>,
    pub c1_empirical: Option<f64>,
    pub phase: Option<Phase>,
    /// Every training restart for this cell diverged.
    pub diverged: bool,
}

impl Cell {
    pub fn get(&self, channel: Channel) -> Option<f64> {
        match channel {
            Channel::Analytic => self.c1_analytic,
            Channel::Empirical => self.c1_empirical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub family: ModelFamily,
    pub nonlinearity: Nonlinearity,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    importance_axis: Vec<f64>,
    sparsity_axis: Vec<f64>,
    cells: Vec<Cell>,
    meta: GridMeta,
}

fn check_axis(name: &str, axis: &[f64], upper: Option<f64>) -> Result<()> {
    if axis.is_empty() {
        return Err(invalid(format!("{name} axis is empty")));
    }
    if axis.iter().any(|&x| !(x.is_finite() && x > 0.0 && upper.is_none_or(|u| x <= u))) {
        return Err(invalid(format!("{name} axis has values outside the allowed range")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

impl PhaseGrid {
    pub fn new(importance_axis: Vec<f64>, sparsity_axis: Vec<f64>, cells: Vec<Cell>, meta: GridMeta) -> Result<Self> {
        check_axis("importance", &importance_axis, None)?;
        check_axis("sparsity", &sparsity_axis, Some(1.0))?;
        if cells.len() != importance_axis.len() * sparsity_axis.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} cells for a {}x{} grid",
                cells.len(),
                importance_axis.len(),
                sparsity_axis.len()
            )));
        }
        let in_range = |c: Option<f64>| c.is_none_or(|x| (0.0..=1.0).contains(&x));
        if !cells.iter().all(|c| in_range(c.c1_analytic) && in_range(c.c1_empirical)) {
            return Err(invalid("cell capacities must lie in [0, 1]"));
        }
        Ok(Self {
            importance_axis,
            sparsity_axis,
            cells,
            meta,
        })
    }

    pub(crate) fn empty(importance_axis: Vec<f64>, sparsity_axis: Vec<f64>, meta: GridMeta) -> Result<Self> {
        let cells = vec![Cell::default(); importance_axis.len() * sparsity_axis.len()];
        Self::new(importance_axis, sparsity_axis, cells, meta)
    }

    pub fn importance_axis(&self) -> &[f64] {
        &self.importance_axis
    }

    pub fn sparsity_axis(&self) -> &[f64] {
        &self.sparsity_axis
    }

    pub fn kurtosis_axis(&self) -> Vec<f64> {
        self.sparsity_axis.iter().map(|&p| 9.0 / (5.0 * p)).collect()
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Row-major index of the cell at importance index `iv`, sparsity index `ip`.
    pub fn index(&self, iv: usize, ip: usize) -> usize {
        ip * self.importance_axis.len() + iv
    }

    pub fn cell(&self, iv: usize, ip: usize) -> &Cell {
        &self.cells[self.index(iv, ip)]
    }

    pub(crate) fn cell_mut(&mut self, index: usize) -> &mut Cell {
        &mut self.cells[index]
    }

    pub fn has_channel(&self, channel: Channel) -> bool {
        self.cells.iter().any(|c| c.get(channel).is_some())
    }

    /// Merge the populated fields of `other` (same axes) into this grid.
    pub fn merge(&mut self, other: &PhaseGrid) -> Result<()> {
        if self.importance_axis != other.importance_axis || self.sparsity_axis != other.sparsity_axis {
            return Err(Error::DimensionMismatch("grids have different axes".into()));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.c1_analytic = a.c1_analytic.or(b.c1_analytic);
            a.c1_empirical = a.c1_empirical.or(b.c1_empirical);
            a.phase = a.phase.or(b.phase);
            a.diverged |= b.diverged;
        }
        Ok(())
    }

    /// Mean absolute difference between the channels over cells holding both.
    pub fn mean_abs_deviation(&self) -> Option<f64> {
        let diffs: Vec<f64> = self
            .cells
            .iter()
            .filter_map(|c| Some((c.c1_empirical? - c.c1_analytic?).abs()))
            .collect();
        (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(fmt_sig).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (ip, &p) in self.sparsity_axis.iter().enumerate() {
            for (iv, &v) in self.importance_axis.iter().enumerate() {
                let c = self.cell(iv, ip);
                let label = match (c.phase, c.diverged) {
                    (Some(ph), _) => ph.as_str(),
                    (None, true) => "diverged",
                    (None, false) => "",
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    fmt_sig(v),
                    fmt_sig(p),
                    fmt_sig(9.0 / (5.0 * p)),
                    opt(c.c1_analytic),
                    opt(c.c1_empirical),
                    label
                ));
            }
        }
        out
    }

    /// Parse CSV written by [`PhaseGrid::to_csv`]. The file does not carry
    /// the metadata, so the caller supplies it.
    pub fn from_csv(text: &str, meta: GridMeta) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::Parse(format!("expected header `{CSV_HEADER}`, got `{}`", header.join(","))));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|e| Error::Parse(format!("bad number `{s}`: {e}"))) };
        let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };

        let mut vs: Vec<f64> = Vec::new();
        let mut ps: Vec<f64> = Vec::new();
        let mut cells = Vec::new();
        let mut coords = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let r = record?;
            if r.len() != 6 {
                return Err(Error::Parse(format!("row {} has {} fields, expected 6", line + 1, r.len())));
            }
            let (v, p, k) = (num(&r[0])?, num(&r[1])?, num(&r[2])?);
            let expected_k = kurtosis_of(p)?;
            if (k - expected_k).abs() > 1e-9 * expected_k {
                return Err(Error::Parse(format!("row {}: k = {k} but 9/(5p) = {expected_k}", line + 1)));
            }
            let (phase, diverged) = match &r[5] {
                "" => (None, false),
                "diverged" => (None, true),
                label => (Some(label.parse::<Phase>()?), false),
            };
            if !vs.contains(&v) {
                vs.push(v);
            }
            if !ps.contains(&p) {
                ps.push(p);
            }
            coords.push((v, p));
            cells.push(Cell {
                c1_analytic: opt(&r[3])?,
                c1_empirical: opt(&r[4])?,
                phase,
                diverged,
            });
        }
        let expected: Vec<(f64, f64)> = ps.iter().flat_map(|&p| vs.iter().map(move |&v| (v, p))).collect();
        if coords != expected {
            return Err(Error::Parse("rows are not a complete grid with p outer and V inner".into()));
        }
        Self::new(vs, ps, cells, meta)
    }
}

/// Quadratic-model optimum `C_1` for `v = (V, 1, …, 1)` at `k = 9/(5p)`.
pub fn analytic_phase_grid(n: usize, d: usize, importance_axis: &[f64], sparsity_axis: &[f64]) -> Result<PhaseGrid> {
    let meta = GridMeta {
        n,
        d,
        family: ModelFamily::Regression,
        nonlinearity: Nonlinearity::Quadratic,
        config_hash: sweep::hash_json(&("analytic", n, d, importance_axis, sparsity_axis)),
    };
    let mut grid = PhaseGrid::empty(importance_axis.to_vec(), sparsity_axis.to_vec(), meta)?;
    for (ip, &p) in sparsity_axis.iter().enumerate() {
        let k = kurtosis_of(p)?;
        for (iv, &v) in importance_axis.iter().enumerate() {
            let sol = solve_allocation(&ImportanceVector::one_varied(n, v)?, d, k)?;
            let idx = grid.index(iv, ip);
            let cell = grid.cell_mut(idx);
            cell.c1_analytic = Some(round_sig(sol.capacities[0]));
            cell.phase = Some(sol.phases[0]);
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadratic::phase_boundaries;

    #[test]
    fn axes() {
        let a = log_axis(0.01, 100.0, 5).unwrap();
        assert_eq!(a, vec![0.01, 0.1, 1.0, 10.0, 100.0]);
        assert_eq!(log_axis(0.5, 1.0, 1).unwrap(), vec![0.5]);
        assert!(log_axis(0.0, 1.0, 3).is_err());
        assert_eq!(default_importance_axis().len(), 25);
        assert_eq!(default_sparsity_axis()[24], 1.0);
    }

    #[test]
    fn critical_row_has_no_fractional_cells() {
        let v_axis = log_axis(0.1, 10.0, 21).unwrap();
        let g = analytic_phase_grid(6, 3, &v_axis, &[0.6]).unwrap();
        for (iv, &v) in v_axis.iter().enumerate() {
            let c = g.cell(iv, 0).c1_analytic.unwrap();
            assert!(c == 0.0 || c == 1.0);
            if v < 1.0 {
                assert_eq!(c, 0.0);
            }
            if v > 1.0 {
                assert_eq!(c, 1.0);
            }
        }
    }

    #[test]
    fn unit_importance_column_is_d_over_n() {
        let p_axis = log_axis(0.01, 0.5, 9).unwrap();
        let g = analytic_phase_grid(6, 3, &[0.5, 1.0, 2.0], &p_axis).unwrap();
        for ip in 0..p_axis.len() {
            assert!((g.cell(1, ip).c1_analytic.unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_monotone_and_match_boundaries() {
        let v_axis = default_importance_axis();
        let p_axis = log_axis(0.01, 0.55, 12).unwrap();
        let g = analytic_phase_grid(6, 3, &v_axis, &p_axis).unwrap();
        for (ip, &p) in p_axis.iter().enumerate() {
            let b = phase_boundaries(6, 3, kurtosis_of(p).unwrap()).unwrap();
            let row: Vec<f64> = (0..v_axis.len()).map(|iv| g.cell(iv, ip).c1_analytic.unwrap()).collect();
            assert!(row.windows(2).all(|w| w[1] >= w[0]));
            for (iv, &v) in v_axis.iter().enumerate() {
                if v <= b.ignore {
                    assert_eq!(row[iv], 0.0);
                }
                if v >= b.full {
                    assert_eq!(row[iv], 1.0);
                }
                if v > b.ignore && v < b.full {
                    assert!(row[iv] > 0.0 && row[iv] < 1.0);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = analytic_phase_grid(6, 3, &[0.1, 3.0], &[0.05, 0.9]).unwrap();
        let text = g.to_csv();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with(CSV_HEADER));
        let back = PhaseGrid::from_csv(&text, g.meta().clone()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn csv_round_trip_default_axes() {
        let g = analytic_phase_grid(6, 3, &default_importance_axis(), &default_sparsity_axis()).unwrap();
        let back = PhaseGrid::from_csv(&g.to_csv(), g.meta().clone()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn csv_rejects_wrong_kurtosis() {
        let g = analytic_phase_grid(6, 3, &[1.0], &[0.5]).unwrap();
        let bad = g.to_csv().replace(",3.6,", ",3.7,");
        assert!(matches!(PhaseGrid::from_csv(&bad, g.meta().clone()), Err(Error::Parse(_))));
    }

    #[test]
    fn csv_missing_channels_and_divergence() {
        let meta = analytic_phase_grid(6, 3, &[1.0], &[0.5]).unwrap().meta().clone();
        let cells = vec![
            Cell {
                c1_empirical: Some(0.25),
                ..Cell::default()
            },
            Cell {
                diverged: true,
                ..Cell::default()
            },
        ];
        let g = PhaseGrid::new(vec![1.0, 2.0], vec![0.5], cells, meta.clone()).unwrap();
        let text = g.to_csv();
        assert!(text.contains("1.0,0.5,3.6,,0.25,\n"));
        assert!(text.contains(",,,diverged\n"));
        assert_eq!(PhaseGrid::from_csv(&text, meta).unwrap(), g);
    }

    #[test]
    fn rejects_bad_axes() {
        let meta = analytic_phase_grid(6, 3, &[1.0], &[0.5]).unwrap().meta().clone();
        assert!(PhaseGrid::new(vec![2.0, 1.0], vec![0.5], vec![Cell::default(); 2], meta.clone()).is_err());
        assert!(PhaseGrid::new(vec![1.0], vec![1.5], vec![Cell::default()], meta.clone()).is_err());
        assert!(analytic_phase_grid(6, 3, &[], &[0.5]).is_err());
    }
}
