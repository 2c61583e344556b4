//! Geometry of efficient embedding matrices.
//!
//! A matrix is efficient when its capacities saturate `Σ C_i = D`. Efficient
//! matrices are exactly those of the form `W = Q B P`: an orthogonal `Q`, a
//! block-diagonal `B` whose blocks are scaled semiorthogonal matrices
//! `√λ_k R_k`, and a column permutation `P`. In terms of the SVD
//! `W = Q S R`, the rows of `R` belonging to different singular values never
//! share a nonzero column.
//!
//! [`block_decomposition`] recovers that structure by clustering singular
//! values and reading off which features each cluster's rows of `R` touch.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::capacity::{capacity_vector, zero_columns};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Singular values below `RANK_RELATIVE · S_max` are dropped from the compact SVD.
pub const RANK_RELATIVE: f64 = 1e-10;

/// Default relative singular-value gap that separates two blocks.
pub const DEFAULT_GAP_TOLERANCE: f64 = 1e-6;

/// A column touches a singular-value cluster when its projection onto the
/// cluster's rows of `R` exceeds this fraction of `max |R|`.
pub const SUPPORT_RELATIVE: f64 = 1e-8;

/// Compact SVD `W = Q · diag(S) · R` truncated to the numerical rank.
#[derive(Debug, Clone)]
pub struct Svd {
    left: DMatrix<f64>,
    singular_values: Vec<f64>,
    right: DMatrix<f64>,
}

impl Svd {
    /// `D x r` matrix with orthonormal columns.
    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// `r x N` matrix with orthonormal rows.
    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (mut col, s) in scaled.column_iter_mut().zip(&self.singular_values) {
            col *= *s;
        }
        scaled * &self.right
    }
}

fn svd_of(m: &DMatrix<f64>) -> Result<Svd> {
    let (rows, cols) = m.shape();
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|_| Error::SvdNonConvergence { rows, cols })?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let s_max = if s.nrows() > 0 { s[0] } else { 0.0 };
    let rank = (0..s.nrows())
        .take_while(|&a| s_max > 0.0 && s[a] > RANK_RELATIVE * s_max)
        .count();
    Ok(Svd {
        left: DMatrix::from_fn(rows, rank, |i, a| u[(i, a)]),
        singular_values: (0..rank).map(|a| s[a]).collect(),
        right: DMatrix::from_fn(rank, cols, |a, j| v[(j, a)]),
    })
}

pub fn singular_value_decomposition(w: &EmbeddingMatrix) -> Result<Svd> {
    svd_of(w.entries())
}

/// True iff `D − Σ C_i ≤ tol`.
pub fn is_efficient(w: &EmbeddingMatrix, tol: f64) -> bool {
    w.dim() as f64 - capacity_vector(w).sum() <= tol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub feature_indices: Vec<usize>,
    pub subspace_dim: usize,
    /// `λ_k`, the common squared singular value; `‖W_i‖² = λ_k C_i` inside the block.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub blocks: Vec<Block>,
    /// Zero columns.
    pub ignored: Vec<usize>,
    /// Features whose embedding touches more than one singular-value cluster.
    pub ambiguous: Vec<usize>,
    /// `D − Σ C_i`.
    pub residual_efficiency_gap: f64,
    pub is_efficient: bool,
}

impl BlockDecomposition {
    pub fn total_subspace_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.subspace_dim).sum()
    }

    /// Block partition as sorted index sets, blocks ordered by first index.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|b| b.feature_indices.clone()).collect()
    }
}

fn connected_components(members: &[usize], gram: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let mut seen = vec![false; members.len()];
    let mut components = Vec::new();
    for start in 0..members.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(a) = stack.pop() {
            comp.push(members[a]);
            for b in 0..members.len() {
                if seen[b] {
                    continue;
                }
                let (i, j) = (members[a], members[b]);
                let cos = gram[(i, j)].abs() / (gram[(i, i)] * gram[(j, j)]).sqrt();
                if cos > SUPPORT_RELATIVE {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

fn column_rank(w: &DMatrix<f64>, cols: &[usize]) -> Result<usize> {
    let sub = DMatrix::from_columns(&cols.iter().map(|&j| w.column(j)).collect::<Vec<_>>());
    let svd = svd_of(&sub)?;
    let s_max = svd.singular_values.first().copied().unwrap_or(0.0);
    Ok(svd
        .singular_values
        .iter()
        .filter(|&&s| s > SUPPORT_RELATIVE * s_max)
        .count())
}

/// Recovers the block structure of `w`. `tol` is the relative singular-value
/// gap `(S_a − S_{a+1}) / S_max` that starts a new block, and also the
/// efficiency threshold on `D − Σ C_i` (scaled by `D`).
///
/// Within one singular value, features are further split into mutually
/// orthogonal groups, so a padded identity yields singleton blocks.
pub fn block_decomposition(w: &EmbeddingMatrix, tol: f64) -> Result<BlockDecomposition> {
    let gap = w.dim() as f64 - capacity_vector(w).sum();
    let norms = w.norms();
    let zero = zero_columns(&norms);
    let ignored: Vec<usize> = (0..w.features()).filter(|&i| zero[i]).collect();
    let live: Vec<usize> = (0..w.features()).filter(|&i| !zero[i]).collect();
    let efficient_gap = gap <= tol.max(1e-9) * w.dim() as f64;

    if live.is_empty() {
        return Ok(BlockDecomposition {
            blocks: Vec::new(),
            ignored,
            ambiguous: Vec::new(),
            residual_efficiency_gap: gap,
            is_efficient: false,
        });
    }

    let sub = DMatrix::from_columns(&live.iter().map(|&j| w.column(j)).collect::<Vec<_>>());
    let svd = svd_of(&sub)?;
    let s = svd.singular_values();
    let s_max = s[0];

    // Cluster boundaries over the descending singular values.
    let mut clusters: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    for a in 1..s.len() {
        if (s[a - 1] - s[a]) / s_max > tol {
            clusters.push(start..a);
            start = a;
        }
    }
    clusters.push(start..s.len());

    let r = svd.right();
    let r_max = r.amax();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    let mut ambiguous = Vec::new();
    for (col, &feature) in live.iter().enumerate() {
        let touched: Vec<usize> = clusters
            .iter()
            .enumerate()
            .filter(|(_, range)| {
                let weight: f64 = (*range).clone().map(|a| r[(a, col)].powi(2)).sum();
                weight.sqrt() > SUPPORT_RELATIVE * r_max
            })
            .map(|(c, _)| c)
            .collect();
        match touched.as_slice() {
            [c] => members[*c].push(feature),
            _ => ambiguous.push(feature),
        }
    }

    let gram = w.gram();
    let mut blocks = Vec::new();
    for (c, range) in clusters.iter().enumerate() {
        if members[c].is_empty() {
            continue;
        }
        let scale = range.clone().map(|a| s[a] * s[a]).sum::<f64>() / range.len() as f64;
        for comp in connected_components(&members[c], &gram) {
            let subspace_dim = column_rank(w.entries(), &comp)?;
            blocks.push(Block {
                feature_indices: comp,
                subspace_dim,
                scale,
            });
        }
    }
    blocks.sort_by_key(|b| b.feature_indices[0]);

    Ok(BlockDecomposition {
        blocks,
        ignored,
        is_efficient: ambiguous.is_empty() && efficient_gap,
        ambiguous,
        residual_efficiency_gap: gap,
    })
}

/// Checks that `dec` describes `w` as a tegum product: features in different
/// blocks are orthogonal, and each block `W_k` satisfies
/// `W_k W_kᵀ = λ_k P_k` with `P_k` the projector onto its `D_k`-dimensional
/// column span. All comparisons are relative to the matrix scale.
pub fn verify_block_form(w: &EmbeddingMatrix, dec: &BlockDecomposition, tol: f64) -> bool {
    if !dec.ambiguous.is_empty() {
        return false;
    }
    let n = w.features();
    let mut owner = vec![None; n];
    for (k, b) in dec.blocks.iter().enumerate() {
        for &i in &b.feature_indices {
            if i >= n || owner[i].is_some() {
                return false;
            }
            owner[i] = Some(k);
        }
    }
    let norms = w.norms();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    for &i in &dec.ignored {
        if i >= n || owner[i].is_some() || norms[i].sqrt() > tol * max_norm.sqrt() {
            return false;
        }
    }
    if (0..n).any(|i| owner[i].is_none() && !dec.ignored.contains(&i)) {
        return false;
    }

    let gram = w.gram();
    for i in 0..n {
        for j in (i + 1)..n {
            if let (Some(a), Some(b)) = (owner[i], owner[j]) {
                if a != b && gram[(i, j)].abs() > tol * max_norm {
                    return false;
                }
            }
        }
    }

    for b in &dec.blocks {
        let wk = DMatrix::from_columns(
            &b.feature_indices
                .iter()
                .map(|&j| w.column(j))
                .collect::<Vec<_>>(),
        );
        let Ok(svd) = svd_of(&wk) else {
            return false;
        };
        let u = svd.left();
        if b.subspace_dim > u.ncols() {
            return false;
        }
        let basis = u.columns(0, b.subspace_dim);
        let projector = basis * basis.transpose();
        let outer = &wk * wk.transpose();
        let residual = (outer - projector * b.scale).amax();
        if residual > tol * b.scale.max(f64::MIN_POSITIVE) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{gaussian, gaussian_matrix, planted_blocks, random_orthogonal};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let d: usize = blocks.iter().map(|b| b.nrows()).sum();
        let n: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = DMatrix::zeros(d, n);
        let (mut r, mut c) = (0, 0);
        for b in blocks {
            out.view_mut((r, c), b.shape()).copy_from(b);
            r += b.nrows();
            c += b.ncols();
        }
        out
    }

    #[test]
    fn svd_identity() {
        let w = EmbeddingMatrix::padded_identity(3, 3).unwrap();
        let svd = singular_value_decomposition(&w).unwrap();
        for &s in svd.singular_values() {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn svd_semiorthogonal_has_flat_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = random_orthogonal(&mut rng, 5).rows(0, 3).into_owned();
        let w = EmbeddingMatrix::new(r * 4.0_f64.sqrt()).unwrap();
        for &s in singular_value_decomposition(&w).unwrap().singular_values() {
            assert_abs_diff_eq!(s, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn svd_truncates_rank() {
        let w = EmbeddingMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).unwrap();
        let svd = singular_value_decomposition(&w).unwrap();
        assert_eq!(svd.rank(), 1);
        assert!((svd.reconstruct() - w.entries()).amax() < 1e-12);
    }

    #[test]
    fn svd_reconstruction_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let w = gaussian_matrix(&mut rng, 4, 7);
            let svd = singular_value_decomposition(&w).unwrap();
            let s = svd.singular_values();
            assert!(s.windows(2).all(|p| p[0] >= p[1]) && s.iter().all(|&x| x >= 0.0));
            let err = (svd.reconstruct() - w.entries()).amax();
            assert!(err <= 1e-10 * w.entries().amax());
        }
    }

    #[test]
    fn efficiency_checks() {
        assert!(is_efficient(&EmbeddingMatrix::padded_identity(3, 6).unwrap(), 1e-6));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            assert!(!is_efficient(&gaussian_matrix(&mut rng, 3, 6), 1e-6));
        }
    }

    #[test]
    fn two_planted_blocks_recovered() {
        let antipodal = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let semi = random_orthogonal(&mut rng, 4).rows(0, 2).into_owned() * 5.0_f64.sqrt();
        let w = EmbeddingMatrix::new(block_diag(&[antipodal, semi])).unwrap();
        let dec = block_decomposition(&w, DEFAULT_GAP_TOLERANCE).unwrap();
        assert!(dec.is_efficient);
        assert_eq!(dec.partition(), vec![vec![0, 1], vec![2, 3, 4, 5]]);
        assert_abs_diff_eq!(dec.blocks[0].scale, 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(dec.blocks[1].scale, 5.0, epsilon = 1e-10);
        assert_eq!(dec.blocks[0].subspace_dim, 1);
        assert_eq!(dec.blocks[1].subspace_dim, 2);
        assert!(verify_block_form(&w, &dec, 1e-8));
    }

    #[test]
    fn diagonal_gives_singletons() {
        let w = EmbeddingMatrix::from_row_slice(
            3,
            4,
            &[1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0],
        )
        .unwrap();
        let dec = block_decomposition(&w, DEFAULT_GAP_TOLERANCE).unwrap();
        assert_eq!(dec.partition(), vec![vec![0], vec![1], vec![3]]);
        assert_eq!(dec.ignored, vec![2]);
        assert!(dec.is_efficient);
        assert!(dec.blocks.iter().all(|b| b.subspace_dim == 1));
    }

    #[test]
    fn padded_permuted_identity_verifies_with_singletons() {
        let mut m = DMatrix::zeros(3, 5);
        m[(0, 4)] = 1.0;
        m[(1, 0)] = 1.0;
        m[(2, 2)] = 1.0;
        let w = EmbeddingMatrix::new(m).unwrap();
        let dec = block_decomposition(&w, DEFAULT_GAP_TOLERANCE).unwrap();
        assert_eq!(dec.partition(), vec![vec![0], vec![2], vec![4]]);
        assert_eq!(dec.ignored, vec![1, 3]);
        assert!(verify_block_form(&w, &dec, 1e-10));
    }

    #[test]
    fn single_semiorthogonal_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = EmbeddingMatrix::new(random_orthogonal(&mut rng, 6).rows(0, 3).into_owned()).unwrap();
        let dec = block_decomposition(&w, DEFAULT_GAP_TOLERANCE).unwrap();
        assert_eq!(dec.partition(), vec![(0..6).collect::<Vec<_>>()]);
        assert_eq!(dec.blocks[0].subspace_dim, 3);
        assert!(verify_block_form(&w, &dec, 1e-10));
    }

    #[test]
    fn generic_matrix_is_ambiguous() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = gaussian_matrix(&mut rng, 3, 6);
        let dec = block_decomposition(&w, DEFAULT_GAP_TOLERANCE).unwrap();
        assert!(!dec.is_efficient);
        assert!(!dec.ambiguous.is_empty());
        assert!(dec.residual_efficiency_gap > 1e-3);
        assert!(!verify_block_form(&w, &dec, 1e-6));
    }

    #[test]
    fn perturbation_breaks_block_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let planted = planted_blocks(&mut rng, &[(1, 2), (2, 4)]);
        let dec = block_decomposition(&planted.matrix, DEFAULT_GAP_TOLERANCE).unwrap();
        assert!(verify_block_form(&planted.matrix, &dec, 1e-8));
        let noisy = EmbeddingMatrix::new(planted.matrix.entries() + gaussian(&mut rng, 3, 6) * 1e-3).unwrap();
        assert!(!verify_block_form(&noisy, &dec, 1e-6));
        let noisy_dec = block_decomposition(&noisy, DEFAULT_GAP_TOLERANCE).unwrap();
        assert!(!verify_block_form(&noisy, &noisy_dec, 1e-6));
        assert!(!noisy_dec.is_efficient);
    }

    #[test]
    fn all_zero_matrix() {
        let w = EmbeddingMatrix::new(DMatrix::zeros(2, 3)).unwrap();
        let dec = block_decomposition(&w, DEFAULT_GAP_TOLERANCE).unwrap();
        assert!(dec.blocks.is_empty());
        assert_eq!(dec.ignored, vec![0, 1, 2]);
        assert!(!dec.is_efficient);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn planted_structure_properties(seed in any::<u64>(), shape_pick in 0usize..4) {
            let shapes: &[&[(usize, usize)]] = &[
                &[(1, 2), (2, 4)],
                &[(1, 1), (2, 3), (1, 3)],
                &[(3, 5)],
                &[(1, 1), (1, 4), (2, 5)],
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let planted = planted_blocks(&mut rng, shapes[shape_pick]);
            let w = &planted.matrix;
            prop_assert!(is_efficient(w, 1e-8));
            let dec = block_decomposition(w, DEFAULT_GAP_TOLERANCE).unwrap();
            let mut want = planted.blocks.clone();
            want.sort();
            prop_assert_eq!(dec.partition(), want);
            let c = capacity_vector(w);
            let norms = w.norms();
            for b in &dec.blocks {
                let sum: f64 = b.feature_indices.iter().map(|&i| c[i]).sum();
                prop_assert!((sum - b.subspace_dim as f64).abs() <= 1e-6);
                for &i in &b.feature_indices {
                    prop_assert!((norms[i] - b.scale * c[i]).abs() <= 1e-6 * b.scale);
                }
            }
        }
    }
}
