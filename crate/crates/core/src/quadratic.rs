//! Expected loss and optimal capacity allocation for the quadratic model.
//!
//! The model predicts `ỹ = xᵀWᵀWx + b` for the target `y = Σ_i v_i x_i²`.
//! With independent zero-mean, unit-variance inputs of fourth moment `k` and
//! the optimal bias, the expected squared error is
//!
//! ```text
//! L = (k−1) Σ_i (‖W_i‖² − v_i)² + 2 Σ_{i≠j} (W_i·W_j)²
//!   = (k−1) Σ_i (n_i − v_i)² − 2 Σ_i n_i² + 2 Σ_i n_i² / C_i
//! ```
//!
//! in terms of squared lengths `n_i` and capacities `C_i`. Minimising over
//! `n` at fixed `C` and then over `C` under `Σ C_i = D` gives a clipped
//! linear allocation governed by a single scale `λ`:
//!
//! ```text
//! C_i = clip((k−1)/(k−3) · v_i/λ − 2/(k−3), 0, 1),    n_i = λ C_i  (0 < C_i < 1)
//! ```
//!
//! For `k ≤ 3` the loss is concave (or flat) in each `C_i`, so features are
//! either fully represented or ignored.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::capacity::CapacityVector;
use crate::error::{invalid, Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Capacities within this distance of 0 or 1 are snapped to the boundary.
pub const SNAP_TOLERANCE: f64 = 1e-10;

const BISECTION_TOLERANCE: f64 = 1e-12;
const BISECTION_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ImportanceVector(Vec<f64>);

impl ImportanceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("importance vector is empty"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(invalid(format!("importance v_{i} = {v} must be finite and >= 0")));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(invalid("at least one importance must be positive"));
        }
        Ok(Self(values))
    }

    /// `(V, 1, 1, …, 1)` with `n` entries.
    pub fn one_varied(n: usize, first: f64) -> Result<Self> {
        let mut v = vec![1.0; n];
        if let Some(x) = v.first_mut() {
            *x = first;
        }
        Self::new(v)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ImportanceVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ImportanceVector> for Vec<f64> {
    fn from(v: ImportanceVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Ignored,
    Polysemantic,
    Monosemantic,
}

impl Phase {
    pub fn of_capacity(c: f64) -> Self {
        if c == 0.0 {
            Phase::Ignored
        } else if c == 1.0 {
            Phase::Monosemantic
        } else {
            Phase::Polysemantic
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Ignored => "ignored",
            Phase::Polysemantic => "polysemantic",
            Phase::Monosemantic => "monosemantic",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ignored" => Ok(Phase::Ignored),
            "polysemantic" => Ok(Phase::Polysemantic),
            "monosemantic" => Ok(Phase::Monosemantic),
            other => Err(Error::Parse(format!("unknown phase label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub capacities: CapacityVector,
    /// Squared embedding lengths `n_i = ‖W_i‖²`.
    pub norms: Vec<f64>,
    /// The scale `λ`: polysemantic features satisfy `n_i = λ C_i`, and a
    /// feature is ignored when `(k−1) v_i / 2 ≤ λ`, fully represented when
    /// `v_i ≥ λ`. In the `k ≤ 3` branch it is the smallest represented importance.
    pub lagrange: f64,
    pub phases: Vec<Phase>,
    pub kurtosis: f64,
    /// Set when the optimum is not unique (`k = 3` exactly, or ties at the
    /// cut in the `k ≤ 3` branch).
    pub non_unique: bool,
}

impl AllocationSolution {
    /// Marginal value of capacity at the optimum: every polysemantic feature
    /// has `∂L/∂C_i = −2λ²`.
    pub fn shadow_price(&self) -> f64 {
        2.0 * self.lagrange * self.lagrange
    }
}

fn check_kurtosis(k: f64) -> Result<()> {
    if !(k.is_finite() && k > 1.0) {
        return Err(invalid(format!("kurtosis must be finite and > 1, got {k}")));
    }
    Ok(())
}

/// `(k−1)·Σ_i(‖W_i‖²−v_i)² + 2·Σ_{i≠j}(W_i·W_j)²`.
pub fn expected_loss_closed_form(w: &EmbeddingMatrix, v: &ImportanceVector, k: f64) -> Result<f64> {
    if v.len() != w.features() {
        return Err(Error::DimensionMismatch(format!(
            "{} importances for {} features",
            v.len(),
            w.features()
        )));
    }
    if !(k.is_finite() && k >= 1.0) {
        return Err(invalid(format!("fourth moment must be >= 1, got {k}")));
    }
    let g = w.gram();
    let mut true_term = 0.0;
    let mut cross = 0.0;
    for i in 0..g.nrows() {
        true_term += (g[(i, i)] - v.values()[i]).powi(2);
        for j in 0..g.ncols() {
            if i != j {
                cross += g[(i, j)].powi(2);
            }
        }
    }
    Ok((k - 1.0) * true_term + 2.0 * cross)
}

/// `(k−1)Σ(n_i−v_i)² − 2Σn_i² + 2Σ n_i²/C_i`, with `n_i²/C_i = 0` when both vanish.
pub fn expected_loss_capacity_form(
    c: &CapacityVector,
    n: &[f64],
    v: &ImportanceVector,
    k: f64,
) -> Result<f64> {
    if c.len() != n.len() || c.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} capacities, {} norms, {} importances",
            c.len(),
            n.len(),
            v.len()
        )));
    }
    if !(k.is_finite() && k >= 1.0) {
        return Err(invalid(format!("fourth moment must be >= 1, got {k}")));
    }
    let mut loss = 0.0;
    for i in 0..n.len() {
        let (ci, ni, vi) = (c[i], n[i], v.values()[i]);
        if !(ni.is_finite() && ni >= 0.0) {
            return Err(invalid(format!("norm n_{i} = {ni} must be >= 0")));
        }
        loss += (k - 1.0) * (ni - vi).powi(2) - 2.0 * ni * ni;
        if ci > 0.0 {
            loss += 2.0 * ni * ni / ci;
        } else if ni > 0.0 {
            return Err(invalid(format!(
                "feature {i} has n = {ni} > 0 but zero capacity; loss undefined"
            )));
        }
    }
    Ok(loss)
}

/// `∂L/∂C_i = −2 n_i² / C_i²`; the `C_i = n_i = 0` limit is 0.
pub fn marginal_loss(c: f64, n: f64) -> Result<f64> {
    if c < 0.0 || n < 0.0 {
        return Err(invalid(format!("capacity and norm must be >= 0, got C = {c}, n = {n}")));
    }
    if c == 0.0 {
        return if n == 0.0 {
            Ok(0.0)
        } else {
            Err(invalid(format!("n = {n} > 0 with zero capacity")))
        };
    }
    Ok(-2.0 * n * n / (c * c))
}

/// Loss-minimising squared length at fixed capacity:
/// `n* = (k−1) v / ((k−3) + 2/C)`, and 0 at `C = 0`.
pub fn optimal_embedding_norm(c: f64, v: f64, k: f64) -> Result<f64> {
    check_kurtosis(k)?;
    if !(0.0..=1.0).contains(&c) {
        return Err(invalid(format!("capacity must lie in [0, 1], got {c}")));
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    let denom = (k - 3.0) + 2.0 / c;
    if denom <= 0.0 {
        return Err(invalid(format!(
            "(k−3) + 2/C = {denom} <= 0 at k = {k}, C = {c}: no finite optimum"
        )));
    }
    Ok((k - 1.0) * v / denom)
}

struct ClipAllocation {
    slope: f64,
    offset: f64,
}

impl ClipAllocation {
    fn new(k: f64) -> Self {
        Self {
            slope: (k - 1.0) / (k - 3.0),
            offset: 2.0 / (k - 3.0),
        }
    }

    fn capacity(&self, v: f64, lambda: f64) -> f64 {
        (self.slope * v / lambda - self.offset).clamp(0.0, 1.0)
    }

    fn total(&self, v: &[f64], lambda: f64) -> f64 {
        v.iter().map(|&vi| self.capacity(vi, lambda)).sum()
    }
}

fn snap(c: f64) -> f64 {
    if c <= SNAP_TOLERANCE {
        0.0
    } else if c >= 1.0 - SNAP_TOLERANCE {
        1.0
    } else {
        c
    }
}

/// Optimal allocation of `d` dimensions among features with importances `v`
/// under inputs of kurtosis `k`.
pub fn solve_allocation(v: &ImportanceVector, d: usize, k: f64) -> Result<AllocationSolution> {
    check_kurtosis(k)?;
    let n = v.len();
    if d == 0 {
        return Err(invalid("dimension budget D must be >= 1"));
    }
    if d > n {
        return Err(Error::Infeasible(format!(
            "budget D = {d} exceeds the feature count N = {n}"
        )));
    }
    let positive = v.values().iter().filter(|&&x| x > 0.0).count();
    if positive < d {
        return Err(Error::Infeasible(format!(
            "only {positive} features have positive importance; cannot fill D = {d} dimensions"
        )));
    }
    if k <= 3.0 {
        solve_concave(v, d, k)
    } else {
        solve_convex(v, d, k)
    }
}

fn solve_concave(v: &ImportanceVector, d: usize, k: f64) -> Result<AllocationSolution> {
    let vals = v.values();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    // Stable sort keeps the lowest index first among equal importances.
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let chosen = &order[..d];
    let cut = vals[order[d - 1]];
    let tie_at_cut = order[d..].iter().any(|&i| vals[i] == cut);
    let mut capacities = vec![0.0; vals.len()];
    let mut norms = vec![0.0; vals.len()];
    for &i in chosen {
        capacities[i] = 1.0;
        norms[i] = vals[i];
    }
    let phases = capacities.iter().map(|&c| Phase::of_capacity(c)).collect();
    Ok(AllocationSolution {
        capacities: CapacityVector::new(capacities, d)?,
        norms,
        lagrange: cut,
        phases,
        kurtosis: k,
        non_unique: k == 3.0 || tie_at_cut,
    })
}

fn solve_convex(v: &ImportanceVector, d: usize, k: f64) -> Result<AllocationSolution> {
    let vals = v.values();
    let alloc = ClipAllocation::new(k);
    let target = d as f64;
    let v_max = vals.iter().copied().fold(0.0, f64::max);

    // Σ_i C_i(λ) is continuous and non-increasing; it is 0 at the upper end
    // and equals the number of positive importances as λ → 0.
    let mut hi = (k - 1.0) * v_max / 2.0;
    let mut lo = hi * 1e-300_f64.max(f64::MIN_POSITIVE);
    for _ in 0..BISECTION_MAX_ITERATIONS {
        if hi - lo <= BISECTION_TOLERANCE * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if alloc.total(vals, mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut lambda = 0.5 * (lo + hi);

    // Polish: with the active sets fixed the constraint is linear in 1/λ.
    let raw: Vec<f64> = vals.iter().map(|&x| alloc.capacity(x, lambda)).collect();
    let poly: Vec<usize> = (0..vals.len())
        .filter(|&i| raw[i] > 0.0 && raw[i] < 1.0)
        .collect();
    let mono = raw.iter().filter(|&&c| c >= 1.0).count();
    if !poly.is_empty() {
        let v_poly: f64 = poly.iter().map(|&i| vals[i]).sum();
        let free = target - mono as f64 + alloc.offset * poly.len() as f64;
        let polished = alloc.slope * v_poly / free;
        if polished.is_finite() && polished > 0.0 {
            let consistent = (0..vals.len()).all(|i| {
                let c = alloc.slope * vals[i] / polished - alloc.offset;
                if poly.contains(&i) {
                    c > -SNAP_TOLERANCE && c < 1.0 + SNAP_TOLERANCE
                } else if raw[i] >= 1.0 {
                    c >= 1.0 - SNAP_TOLERANCE
                } else {
                    c <= SNAP_TOLERANCE
                }
            });
            if consistent {
                lambda = polished;
            }
        }
    }

    let capacities: Vec<f64> = vals.iter().map(|&x| snap(alloc.capacity(x, lambda))).collect();
    let norms: Vec<f64> = capacities
        .iter()
        .zip(vals)
        .map(|(&c, &vi)| match Phase::of_capacity(c) {
            Phase::Ignored => 0.0,
            Phase::Monosemantic => vi,
            Phase::Polysemantic => alloc.slope * vi - alloc.offset * lambda,
        })
        .collect();
    let sum: f64 = capacities.iter().sum();
    if (sum - target).abs() > 1e-8 {
        return Err(Error::Infeasible(format!(
            "allocation sums to {sum}, could not saturate D = {d}"
        )));
    }
    let phases = capacities.iter().map(|&c| Phase::of_capacity(c)).collect();
    Ok(AllocationSolution {
        capacities: CapacityVector::new(capacities, d)?,
        norms,
        lagrange: lambda,
        phases,
        kurtosis: k,
        non_unique: false,
    })
}

/// `λ = (k−1)(N−1+V) / ((k−3)D + 2N)` for importances `(V, 1, …, 1)` when
/// every feature is polysemantic.
pub fn equal_importance_lambda(n: usize, v: f64, d: usize, k: f64) -> Result<f64> {
    if k.is_nan() || k <= 3.0 {
        return Err(invalid(format!("closed-form λ needs k > 3, got {k}")));
    }
    let (n, d) = (n as f64, d as f64);
    Ok((k - 1.0) * (n - 1.0 + v) / ((k - 3.0) * d + 2.0 * n))
}

/// Capacity of feature 1 for importances `(V, 1, …, 1)` in the all-polysemantic regime.
pub fn equal_importance_capacity(n: usize, v: f64, d: usize, k: f64) -> Result<f64> {
    let lambda = equal_importance_lambda(n, v, d, k)?;
    Ok((k - 1.0) / (k - 3.0) * v / lambda - 2.0 / (k - 3.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseBoundaries {
    /// Feature 1 is ignored for `V ≤ ignore`.
    pub ignore: f64,
    /// Feature 1 is fully represented for `V ≥ full`.
    pub full: f64,
    /// Both boundaries collapse to `V = 1` (`k ≤ 3`).
    pub degenerate: bool,
}

/// Importance thresholds for feature 1 with importances `(V, 1, …, 1)`.
pub fn phase_boundaries(n: usize, d: usize, k: f64) -> Result<PhaseBoundaries> {
    check_kurtosis(k)?;
    if d == 0 || n <= d {
        return Err(invalid(format!("phase boundaries need N > D >= 1, got N = {n}, D = {d}")));
    }
    if k <= 3.0 {
        return Ok(PhaseBoundaries {
            ignore: 1.0,
            full: 1.0,
            degenerate: true,
        });
    }
    let (nf, df) = (n as f64, d as f64);
    Ok(PhaseBoundaries {
        ignore: 2.0 * (nf - 1.0) / ((k - 3.0) * df + 2.0 * (nf - 1.0)),
        full: (k - 1.0) * (nf - 1.0) / ((k - 3.0) * (df - 1.0) + 2.0 * (nf - 1.0)),
        degenerate: false,
    })
}

/// Population covariances between the outputs and quadratic input features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDiagnostics {
    /// `Cov[y, x_i²] = v_i (k−1)`.
    pub target_square: Vec<f64>,
    /// `Cov[ỹ, x_i²] = ‖W_i‖² (k−1)`.
    pub model_square: Vec<f64>,
    /// `Cov[ỹ, x_i x_j] = 2 W_i·W_j` for `i ≠ j` (zero diagonal). The target
    /// has none of these: `Cov[y, x_i x_j] = 0`.
    pub hallucinated: DMatrix<f64>,
}

impl CovarianceDiagnostics {
    pub fn max_hallucinated(&self) -> f64 {
        self.hallucinated.amax()
    }
}

pub fn covariance_diagnostics(w: &EmbeddingMatrix, v: &ImportanceVector, k: f64) -> Result<CovarianceDiagnostics> {
    if v.len() != w.features() {
        return Err(Error::DimensionMismatch(format!(
            "{} importances for {} features",
            v.len(),
            w.features()
        )));
    }
    let g = w.gram();
    let mut hallucinated = g.clone() * 2.0;
    hallucinated.fill_diagonal(0.0);
    Ok(CovarianceDiagnostics {
        target_square: v.values().iter().map(|vi| vi * (k - 1.0)).collect(),
        model_square: g.diagonal().iter().map(|n| n * (k - 1.0)).collect(),
        hallucinated,
    })
}
