//! Sparse, unit-variance input features.
//!
//! Each coordinate is `x = s·z` with `s ~ Bernoulli(p)` and
//! `z ~ Uniform(-a, a)`, `a = √(3/p)`. This keeps `E[x] = 0` and
//! `Var[x] = 1` for every keep-probability `p` while the fourth moment grows
//! like `9 / (5p)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    sparsity: f64,
}

impl InputDistribution {
    /// `sparsity` is the keep-probability `p ∈ (0, 1]`.
    pub fn new(sparsity: f64) -> Result<Self> {
        if !(sparsity > 0.0 && sparsity <= 1.0) {
            return Err(invalid(format!(
                "sparsity (keep-probability) must lie in (0, 1], got {sparsity}"
            )));
        }
        Ok(Self { sparsity })
    }

    pub fn dense() -> Self {
        Self { sparsity: 1.0 }
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn half_width(&self) -> f64 {
        (3.0 / self.sparsity).sqrt()
    }

    /// Fourth moment `E[x⁴]`, which equals the kurtosis since `Var[x] = 1`.
    pub fn kurtosis(&self) -> f64 {
        9.0 / (5.0 * self.sparsity)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Draw both variates unconditionally so the stream position does not
        // depend on the Bernoulli outcome.
        let keep = rng.random::<f64>() < self.sparsity;
        let a = self.half_width();
        let z = rng.random_range(-a..a);
        if keep {
            z
        } else {
            0.0
        }
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out {
            *x = self.sample(rng);
        }
    }

    /// Fills a `batch x N` matrix row by row.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize, n: usize) -> DMatrix<f64> {
        let mut data = vec![0.0; batch * n];
        self.fill(rng, &mut data);
        DMatrix::from_row_slice(batch, n, &data)
    }
}

/// Kurtosis `9 / (5p)` of the sparse uniform distribution with keep-probability `p`.
pub fn kurtosis_of(sparsity: f64) -> Result<f64> {
    Ok(InputDistribution::new(sparsity)?.kurtosis())
}

/// Keep-probability that yields kurtosis `k`; inverse of [`kurtosis_of`].
pub fn sparsity_for_kurtosis(k: f64) -> Result<f64> {
    let p = 9.0 / (5.0 * k);
    InputDistribution::new(p).map(|d| d.sparsity())
}

/// Deterministic `batch x N` sample for a given seed.
pub fn sample_inputs(dist: &InputDistribution, n: usize, batch: usize, seed: u64) -> Result<DMatrix<f64>> {
    if batch == 0 || n == 0 {
        return Err(invalid("batch size and feature count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dist.sample_batch(&mut rng, batch, n))
}
