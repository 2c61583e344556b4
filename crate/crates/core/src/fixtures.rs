//! Random and hand-built instances: Gaussian matrices, Haar-random orthogonal
//! matrices, planted block structures and small reference frames.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::EmbeddingMatrix;

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_matrix(rng: &mut impl Rng, d: usize, n: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::new(gaussian(rng, d, n)).expect("gaussian entries are finite")
}

/// Haar-distributed `n x n` orthogonal matrix (QR of a Gaussian matrix with
/// the sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Three unit vectors at 120° in the plane.
pub fn mercedes() -> EmbeddingMatrix {
    let s = 3.0_f64.sqrt() / 2.0;
    EmbeddingMatrix::from_row_slice(2, 3, &[1.0, -0.5, -0.5, 0.0, s, -s]).expect("finite")
}

/// A matrix built as `Q · B · P`: block-diagonal `B` with scaled semiorthogonal
/// blocks, random orthogonal `Q` and a random column permutation `P`.
#[derive(Debug, Clone)]
pub struct PlantedBlocks {
    pub matrix: EmbeddingMatrix,
    /// Feature indices of each planted block, sorted.
    pub blocks: Vec<Vec<usize>>,
    /// Scale `λ_k` of each block, so that `‖W_i‖² = λ_k C_i` inside block `k`.
    pub scales: Vec<f64>,
    /// Subspace dimension `D_k` of each block.
    pub dims: Vec<usize>,
}

/// Plants blocks with the given `(D_k, N_k)` shapes. Scales are drawn so that
/// no two blocks share a singular value: block `k` gets `λ_k` from a disjoint
/// interval.
pub fn planted_blocks(rng: &mut impl Rng, shapes: &[(usize, usize)]) -> PlantedBlocks {
    let d: usize = shapes.iter().map(|s| s.0).sum();
    let n: usize = shapes.iter().map(|s| s.1).sum();
    let mut b = DMatrix::zeros(d, n);
    let mut scales = Vec::with_capacity(shapes.len());
    let (mut row, mut col) = (0, 0);
    let mut owner = vec![0; n];
    for (k, &(dk, nk)) in shapes.iter().enumerate() {
        assert!(dk >= 1 && nk >= dk, "block {k} must satisfy 1 <= D_k <= N_k");
        let scale = (k as f64 + 1.0) * 2.0 + rng.random_range(0.1..1.5);
        let r = random_orthogonal(rng, nk).rows(0, dk).into_owned() * scale.sqrt();
        b.view_mut((row, col), (dk, nk)).copy_from(&r);
        for o in owner.iter_mut().skip(col).take(nk) {
            *o = k;
        }
        scales.push(scale);
        row += dk;
        col += nk;
    }
    let q = random_orthogonal(rng, d);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    // Column `perm[j]` of the output is column `j` of `Q·B`.
    let qb = q * b;
    let mut w = DMatrix::zeros(d, n);
    let mut blocks = vec![Vec::new(); shapes.len()];
    for j in 0..n {
        w.set_column(perm[j], &qb.column(j));
        blocks[owner[j]].push(perm[j]);
    }
    for blk in &mut blocks {
        blk.sort_unstable();
    }
    PlantedBlocks {
        matrix: EmbeddingMatrix::new(w).expect("finite"),
        blocks,
        scales,
        dims: shapes.iter().map(|s| s.0).collect(),
    }
}

/// Random capacity tuple with entries in `[0, 1]` summing to `d`: a
/// Dirichlet(1) draw scaled by `d`, with any excess above 1 redistributed.
pub fn random_capacities(rng: &mut impl Rng, n: usize, d: usize) -> Vec<f64> {
    assert!(d <= n);
    let exp: Vec<f64> = (0..n)
        .map(|_| -rng.random_range(f64::MIN_POSITIVE..1.0).ln())
        .collect();
    let total: f64 = exp.iter().sum();
    let mut c: Vec<f64> = exp.iter().map(|e| e / total * d as f64).collect();
    // Clip and push the excess onto unsaturated entries until nothing exceeds 1.
    loop {
        let excess: f64 = c.iter().map(|&x| (x - 1.0).max(0.0)).sum();
        if excess <= 1e-15 {
            break;
        }
        for x in c.iter_mut() {
            *x = x.min(1.0);
        }
        let room: f64 = c.iter().map(|&x| 1.0 - x).sum();
        for x in c.iter_mut() {
            *x += excess * (1.0 - *x) / room;
        }
    }
    let sum: f64 = c.iter().sum();
    let fix = d as f64 / sum;
    c.iter().map(|x| (x * fix).min(1.0)).collect()
}
