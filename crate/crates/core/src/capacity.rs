//! Feature capacity: the fraction of an embedding dimension a feature uses.
//!
//! For an embedding matrix `W` with Gram matrix `G = WᵀW`,
//!
//! ```text
//! C_i = G_ii² / Σ_j G_ij²  =  (W_i·W_i)² / Σ_j (W_i·W_j)²
//! ```
//!
//! with `C_i = 0` for a zero column. Every `C_i` lies in `[0, 1]` and, when
//! `N ≥ D`, the capacities sum to at most `D`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::singular_value_decomposition;
use crate::matrix::EmbeddingMatrix;
use crate::toy_models::InputDistribution;

/// Columns with `‖W_i‖² < ZERO_COLUMN_RELATIVE · max_j ‖W_j‖²` count as zero.
pub const ZERO_COLUMN_RELATIVE: f64 = 1e-12;

/// Slack allowed on `Σ C_i ≤ D` and on the `[0, 1]` range when validating.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityVector {
    values: Vec<f64>,
    dimension_budget: usize,
}

impl CapacityVector {
    pub fn new(values: Vec<f64>, dimension_budget: usize) -> Result<Self> {
        if let Some((i, c)) = values
            .iter()
            .enumerate()
            .find(|(_, c)| !(**c >= -BUDGET_TOLERANCE && **c <= 1.0 + BUDGET_TOLERANCE))
        {
            return Err(invalid(format!("capacity C_{i} = {c} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if sum > dimension_budget as f64 + BUDGET_TOLERANCE {
            return Err(invalid(format!(
                "capacities sum to {sum}, exceeding the dimension budget {dimension_budget}"
            )));
        }
        Ok(Self {
            values,
            dimension_budget,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dimension_budget(&self) -> usize {
        self.dimension_budget
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl std::ops::Index<usize> for CapacityVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

pub(crate) fn zero_columns(norms: &[f64]) -> Vec<bool> {
    let max = norms.iter().copied().fold(0.0_f64, f64::max);
    norms
        .iter()
        .map(|&n| max == 0.0 || n < ZERO_COLUMN_RELATIVE * max)
        .collect()
}

fn capacities_from_gram(gram: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let diag: Vec<f64> = gram.diagonal().iter().copied().collect();
    let zero = zero_columns(&diag);
    gram.column_iter()
        .enumerate()
        .map(|(i, col)| {
            if zero[i] {
                0.0
            } else {
                let interference = col.norm_squared();
                (diag[i] * diag[i] / interference).min(1.0)
            }
        })
        .collect()
}

pub fn feature_capacity(w: &EmbeddingMatrix, i: usize) -> Result<f64> {
    w.check_index(i)?;
    let norms = w.norms();
    if zero_columns(&norms)[i] {
        return Ok(0.0);
    }
    let wi = w.column(i);
    let interference: f64 = w
        .entries()
        .column_iter()
        .map(|wj| {
            let dot = wi.dot(&wj);
            dot * dot
        })
        .sum();
    Ok((norms[i] * norms[i] / interference).min(1.0))
}

pub fn capacity_vector(w: &EmbeddingMatrix) -> CapacityVector {
    CapacityVector {
        values: capacities_from_gram(&w.gram()),
        dimension_budget: w.dim(),
    }
}

/// Total capacity `Σ C_i`. Requires `N ≥ D`, the regime where the sum is
/// bounded by `D`.
pub fn total_capacity(w: &EmbeddingMatrix) -> Result<f64> {
    if w.features() < w.dim() {
        return Err(invalid(format!(
            "total capacity bound needs N >= D, got N = {} < D = {}",
            w.features(),
            w.dim()
        )));
    }
    Ok(capacity_vector(w).sum())
}

/// Capacity under the SVD definition: with the compact SVD `W = Q S R`,
/// `C̃_i = [RᵀR]_ii`. The entries sum to `rank(W)`.
pub fn alt_capacity_vector(w: &EmbeddingMatrix) -> Result<CapacityVector> {
    let svd = singular_value_decomposition(w)?;
    let values = svd
        .right()
        .column_iter()
        .map(|c| c.norm_squared().min(1.0))
        .collect();
    Ok(CapacityVector {
        values,
        dimension_budget: w.dim(),
    })
}

/// Monte-Carlo estimate of the squared correlation between `x_i` and
/// `[WᵀW x]_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCapacity {
    pub value: f64,
    /// Standard error from batch means.
    pub std_error: f64,
    /// Set when the output has no variance (zero column); `value` is 0.
    pub degenerate: bool,
}

const MC_GROUPS: usize = 20;

#[derive(Default, Clone, Copy)]
struct Moments {
    count: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Moments {
    fn push(&mut self, x: f64, y: f64) {
        self.count += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    fn merge(&mut self, o: &Moments) {
        self.count += o.count;
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.sxy += o.sxy;
    }

    fn rho_squared(&self) -> Option<f64> {
        let n = self.count;
        let cxy = self.sxy / n - (self.sx / n) * (self.sy / n);
        let cxx = self.sxx / n - (self.sx / n).powi(2);
        let cyy = self.syy / n - (self.sy / n).powi(2);
        if cxx <= 0.0 || cyy <= 0.0 {
            None
        } else {
            Some(cxy * cxy / (cxx * cyy))
        }
    }
}

pub fn mc_correlation_capacity(
    w: &EmbeddingMatrix,
    i: usize,
    dist: &InputDistribution,
    samples: usize,
    seed: u64,
) -> Result<McCapacity> {
    w.check_index(i)?;
    if samples < MC_GROUPS * 2 {
        return Err(invalid(format!(
            "need at least {} samples, got {samples}",
            MC_GROUPS * 2
        )));
    }
    let gram = w.gram();
    let norms: Vec<f64> = gram.diagonal().iter().copied().collect();
    if zero_columns(&norms)[i] {
        return Ok(McCapacity {
            value: 0.0,
            std_error: 0.0,
            degenerate: true,
        });
    }
    let row: Vec<f64> = gram.row(i).iter().copied().collect();
    let n = w.features();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; n];
    let per_group = samples / MC_GROUPS;
    let mut groups = Vec::with_capacity(MC_GROUPS);
    for g in 0..MC_GROUPS {
        let count = if g + 1 == MC_GROUPS {
            samples - per_group * (MC_GROUPS - 1)
        } else {
            per_group
        };
        let mut m = Moments::default();
        for _ in 0..count {
            dist.fill(&mut rng, &mut x);
            let y: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            m.push(x[i], y);
        }
        groups.push(m);
    }
    let mut total = Moments::default();
    for g in &groups {
        total.merge(g);
    }
    let Some(value) = total.rho_squared() else {
        return Ok(McCapacity {
            value: 0.0,
            std_error: 0.0,
            degenerate: true,
        });
    };
    let group_values: Vec<f64> = groups.iter().filter_map(Moments::rho_squared).collect();
    let std_error = if group_values.len() > 1 {
        let k = group_values.len() as f64;
        let mean = group_values.iter().sum::<f64>() / k;
        let var = group_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(McCapacity {
        value,
        std_error,
        degenerate: false,
    })
}

impl From<CapacityVector> for Vec<f64> {
    fn from(c: CapacityVector) -> Self {
        c.values
    }
}
