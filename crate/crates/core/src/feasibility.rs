//! Embedding matrices with prescribed capacities.
//!
//! Any tuple `C ∈ [0, 1]^N` with `Σ C_i = D` is the capacity vector of some
//! semiorthogonal `D x N` matrix. The construction works with an orthogonal
//! `N x N` matrix `U` whose top `D` rows form `W`; since `WWᵀ = I`, the
//! capacity of feature `i` is the squared norm of the top part of column `i`.
//!
//! The tuple is reduced by merging its two smallest entries whenever they sum
//! to at most 1, and by passing to the complement `1 − C` (budget `N − D`)
//! when no such pair exists. A merged column is split back into two by
//! appending a fresh coordinate and rotating the final pair of columns.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::capacity::{CapacityVector, BUDGET_TOLERANCE};
use crate::error::{invalid, Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Entries this close to 0 or 1 are treated as exact in the base case.
const BINARY_TOLERANCE: f64 = 1e-12;

/// Relative spread allowed between `n_i / C_i` ratios of fractional features.
pub const RATIO_TOLERANCE: f64 = 1e-6;

const SPLIT_MAX_ITERATIONS: usize = 200;

/// Realize `c` (summing to its dimension budget) as a semiorthogonal matrix.
pub fn realize_capacities(c: &CapacityVector) -> Result<EmbeddingMatrix> {
    let d = c.dimension_budget();
    let n = c.len();
    check_saturated(c)?;
    if d == 0 {
        return Err(invalid("dimension budget D must be >= 1"));
    }
    if n < d {
        return Err(Error::Infeasible(format!("N = {n} features cannot fill D = {d} dimensions")));
    }
    let clamped: Vec<f64> = c.values().iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let u = build(&clamped, d)?;
    EmbeddingMatrix::new(u.rows(0, d).into_owned())
}

fn check_saturated(c: &CapacityVector) -> Result<()> {
    let sum = c.sum();
    let d = c.dimension_budget();
    if (sum - d as f64).abs() > BUDGET_TOLERANCE {
        return Err(Error::Infeasible(format!(
            "capacities sum to {sum}; a realization needs exactly D = {d}"
        )));
    }
    Ok(())
}

/// Orthogonal `n x n` matrix whose top `d` rows give column `i` squared norm `c[i]`.
fn build(c: &[f64], d: usize) -> Result<DMatrix<f64>> {
    let n = c.len();
    if d == 0 || d == n {
        return Ok(DMatrix::identity(n, n));
    }
    if c.iter().all(|&x| x <= BINARY_TOLERANCE || x >= 1.0 - BINARY_TOLERANCE) {
        return permutation_base(c, d);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
    let (i, j) = (order[0], order[1]);
    let merged_value = c[i] + c[j];

    if merged_value > 1.0 + BINARY_TOLERANCE {
        // No pair fits in one dimension; in the complement every pair does.
        let complement: Vec<f64> = c.iter().map(|x| 1.0 - x).collect();
        let u = build(&complement, n - d)?;
        let mut out = DMatrix::zeros(n, n);
        out.rows_mut(0, d).copy_from(&u.rows(n - d, d));
        out.rows_mut(d, n - d).copy_from(&u.rows(0, n - d));
        return Ok(out);
    }

    let rest: Vec<usize> = (0..n).filter(|&x| x != i && x != j).collect();
    let mut merged: Vec<f64> = rest.iter().map(|&x| c[x]).collect();
    merged.push(merged_value.min(1.0));
    let inner = build(&merged, d)?;

    let mut ext = DMatrix::zeros(n, n);
    ext.view_mut((0, 0), (n - 1, n - 1)).copy_from(&inner);
    ext[(n - 1, n - 1)] = 1.0;
    split_pair(&mut ext, d, (c[i], c[j]))?;

    let mut out = DMatrix::zeros(n, n);
    for (col, &feature) in rest.iter().enumerate() {
        out.set_column(feature, &ext.column(col));
    }
    out.set_column(i, &ext.column(n - 2));
    out.set_column(j, &ext.column(n - 1));
    Ok(out)
}

fn permutation_base(c: &[f64], d: usize) -> Result<DMatrix<f64>> {
    let n = c.len();
    let ones: Vec<usize> = (0..n).filter(|&i| c[i] >= 0.5).collect();
    if ones.len() != d {
        return Err(Error::Infeasible(format!(
            "binary capacity tuple has {} ones for budget {d}",
            ones.len()
        )));
    }
    let zeros = (0..n).filter(|&i| c[i] < 0.5);
    let mut u = DMatrix::zeros(n, n);
    for (row, col) in ones.into_iter().chain(zeros).enumerate() {
        u[(row, col)] = 1.0;
    }
    Ok(u)
}

fn top_norm_sq(u: &DMatrix<f64>, d: usize, a: f64, b: f64, col_a: usize, col_b: usize) -> f64 {
    (0..d)
        .map(|r| {
            let x = a * u[(r, col_a)] + b * u[(r, col_b)];
            x * x
        })
        .sum()
}

/// Rotate the last two columns of the orthogonal matrix `state` so that the
/// top-`d` squared norm of the second-to-last column becomes `target.0` and
/// that of the last column `target.1`. Returns the rotation angle.
///
/// The two targets must add up to the combined top-`d` squared norm of the
/// pair, and `target.0` must lie between the norms at angles 0 and π/2.
pub fn split_pair(state: &mut DMatrix<f64>, d: usize, target: (f64, f64)) -> Result<f64> {
    let n = state.ncols();
    if n < 2 || state.nrows() != n || d > n {
        return Err(Error::DimensionMismatch(format!(
            "split needs a square state with at least 2 columns and d <= N, got {}x{n}, d = {d}",
            state.nrows()
        )));
    }
    let (ca, cb) = (n - 2, n - 1);
    let f = |theta: f64, u: &DMatrix<f64>| top_norm_sq(u, d, theta.cos(), theta.sin(), ca, cb);
    let available = top_norm_sq(state, d, 1.0, 0.0, ca, ca) + top_norm_sq(state, d, 1.0, 0.0, cb, cb);
    if (target.0 + target.1 - available).abs() > 1e-10 {
        return Err(Error::Infeasible(format!(
            "split targets sum to {}, but the pair holds {available}",
            target.0 + target.1
        )));
    }
    let (f0, f1) = (f(0.0, state), f(std::f64::consts::FRAC_PI_2, state));
    let (lo_val, hi_val) = (f0.min(f1), f0.max(f1));
    if target.0 < lo_val - 1e-10 || target.0 > hi_val + 1e-10 {
        return Err(Error::Infeasible(format!(
            "split target {} outside the reachable range [{lo_val}, {hi_val}]",
            target.0
        )));
    }
    let decreasing = f0 >= f1;
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2);
    for _ in 0..SPLIT_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let above = f(mid, state) > target.0;
        if above == decreasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let (s, co) = theta.sin_cos();
    for r in 0..n {
        let (a, b) = (state[(r, ca)], state[(r, cb)]);
        state[(r, ca)] = co * a + s * b;
        state[(r, cb)] = -s * a + co * b;
    }
    Ok(theta)
}

/// Realize capacities together with squared lengths `n`.
///
/// Fully represented features (`C_i = 1`) get their own dimension with any
/// length. Fractional features share one scaled semiorthogonal block, so
/// their ratios `n_i / C_i` must agree. Ignored features become zero columns.
pub fn realize_allocation(c: &CapacityVector, norms: &[f64]) -> Result<EmbeddingMatrix> {
    let n = c.len();
    let d = c.dimension_budget();
    if norms.len() != n {
        return Err(Error::DimensionMismatch(format!("{} norms for {n} capacities", norms.len())));
    }
    check_saturated(c)?;
    let mut mono = Vec::new();
    let mut frac = Vec::new();
    for i in 0..n {
        let (ci, ni) = (c[i], norms[i]);
        if !(ni.is_finite() && ni >= 0.0) {
            return Err(invalid(format!("norm n_{i} = {ni} must be finite and >= 0")));
        }
        if ci <= BINARY_TOLERANCE {
            if ni > 0.0 {
                return Err(Error::Infeasible(format!("feature {i} has zero capacity but n = {ni}")));
            }
        } else if ni == 0.0 {
            return Err(Error::Infeasible(format!("feature {i} has capacity {ci} but zero length")));
        } else if ci >= 1.0 - BINARY_TOLERANCE {
            mono.push(i);
        } else {
            frac.push(i);
        }
    }

    let ratios: Vec<f64> = frac.iter().map(|&i| norms[i] / c[i]).collect();
    if let (Some(lo), Some(hi)) = (
        ratios.iter().copied().reduce(f64::min),
        ratios.iter().copied().reduce(f64::max),
    ) {
        if hi - lo > RATIO_TOLERANCE * hi {
            return Err(Error::Infeasible(format!(
                "fractional features need a common n/C ratio; found ratios from {lo} to {hi}"
            )));
        }
    }

    let mut w = DMatrix::zeros(d, n);
    for (row, &i) in mono.iter().enumerate() {
        w[(row, i)] = norms[i].sqrt();
    }
    let block_dim = d - mono.len().min(d);
    if !frac.is_empty() {
        let sub: Vec<f64> = frac.iter().map(|&i| c[i]).collect();
        let block = realize_capacities(&CapacityVector::new(sub, block_dim)?)?;
        for (col, &i) in frac.iter().enumerate() {
            let scale = (norms[i] / c[i]).sqrt();
            for r in 0..block_dim {
                w[(mono.len() + r, i)] = scale * block.entries()[(r, col)];
            }
        }
    }
    EmbeddingMatrix::new(w)
}

/// JSON request accepted by the `realize` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRequest {
    pub capacities: Vec<f64>,
    #[serde(rename = "D", alias = "d")]
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms: Option<Vec<f64>>,
}

impl RealizationRequest {
    pub fn realize(&self) -> Result<EmbeddingMatrix> {
        let c = CapacityVector::new(self.capacities.clone(), self.d)?;
        match &self.norms {
            Some(n) => realize_allocation(&c, n),
            None => realize_capacities(&c),
        }
    }
}
