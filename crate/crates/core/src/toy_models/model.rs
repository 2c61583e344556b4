//! The two toy model families and their exact gradients.
//!
//! Both share an embedding `W` of shape `D x N`. For an input batch `X`
//! (`B x N`, one sample per row) the hidden activations are `H = X Wᵀ`.
//!
//! - Regression predicts the scalar `ỹ = Σ_a σ(H_a) + b` against the target
//!   `y = Σ_i v_i σ(x_i)`. With `σ(t) = t²` this is `ỹ = xᵀWᵀWx + b`.
//! - Autoencoder reconstructs `x̂ = σ(WᵀW x + b)` with a bias per feature and
//!   importance-weighted squared error `Σ_i v_i (x_i − x̂_i)²`.
//!
//! Losses are means over the batch.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadratic::ImportanceVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Quadratic,
    Relu,
    /// `t·Φ(t)` with the exact Gaussian CDF.
    Gelu,
}

impl Nonlinearity {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Nonlinearity::Quadratic => t * t,
            Nonlinearity::Relu => t.max(0.0),
            Nonlinearity::Gelu => t * normal_cdf(t),
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Nonlinearity::Quadratic => 2.0 * t,
            Nonlinearity::Relu => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Gelu => normal_cdf(t) + t * (-0.5 * t * t).exp() / (2.0 * PI).sqrt(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Nonlinearity::Quadratic => "quadratic",
            Nonlinearity::Relu => "relu",
            Nonlinearity::Gelu => "gelu",
        }
    }
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * (1.0 + libm::erf(t * FRAC_1_SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Regression,
    Autoencoder,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Regression => "regression",
            ModelFamily::Autoencoder => "autoencoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ModelSpec {
    family: ModelFamily,
    nonlinearity: Nonlinearity,
    d: usize,
    importances: ImportanceVector,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    family: ModelFamily,
    nonlinearity: Nonlinearity,
    #[serde(rename = "D", alias = "d")]
    d: usize,
    importances: ImportanceVector,
}

impl TryFrom<RawSpec> for ModelSpec {
    type Error = Error;

    fn try_from(r: RawSpec) -> Result<Self> {
        ModelSpec::new(r.family, r.nonlinearity, r.d, r.importances)
    }
}

impl From<ModelSpec> for RawSpec {
    fn from(s: ModelSpec) -> Self {
        RawSpec {
            family: s.family,
            nonlinearity: s.nonlinearity,
            d: s.d,
            importances: s.importances,
        }
    }
}

impl ModelSpec {
    /// `N` is the length of `importances`.
    pub fn new(family: ModelFamily, nonlinearity: Nonlinearity, d: usize, importances: ImportanceVector) -> Result<Self> {
        if d == 0 || d > importances.len() {
            return Err(invalid(format!(
                "need N >= D >= 1, got N = {}, D = {d}",
                importances.len()
            )));
        }
        Ok(Self {
            family,
            nonlinearity,
            d,
            importances,
        })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn n(&self) -> usize {
        self.importances.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn importances(&self) -> &ImportanceVector {
        &self.importances
    }

    pub fn with_importances(&self, importances: ImportanceVector) -> Result<Self> {
        Self::new(self.family, self.nonlinearity, self.d, importances)
    }

    /// 1 for regression, `N` for the autoencoder.
    pub fn bias_len(&self) -> usize {
        match self.family {
            ModelFamily::Regression => 1,
            ModelFamily::Autoencoder => self.n(),
        }
    }

    fn check_shapes(&self, w: &DMatrix<f64>, bias: &[f64], x: &DMatrix<f64>) -> Result<()> {
        if w.nrows() != self.d || w.ncols() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "W is {}x{}, model expects {}x{}",
                w.nrows(),
                w.ncols(),
                self.d,
                self.n()
            )));
        }
        if bias.len() != self.bias_len() {
            return Err(Error::DimensionMismatch(format!(
                "bias has {} entries, model expects {}",
                bias.len(),
                self.bias_len()
            )));
        }
        if x.ncols() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} features, model expects {}",
                x.ncols(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Predictions for a batch: `B x 1` for regression, `B x N` for the autoencoder.
pub fn forward(spec: &ModelSpec, w: &DMatrix<f64>, bias: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.check_shapes(w, bias, x)?;
    let sigma = spec.nonlinearity;
    let h = x * w.transpose();
    Ok(match spec.family {
        ModelFamily::Regression => {
            DMatrix::from_fn(x.nrows(), 1, |b, _| h.row(b).iter().map(|&t| sigma.apply(t)).sum::<f64>() + bias[0])
        }
        ModelFamily::Autoencoder => {
            let mut z = h * w;
            for mut row in z.row_iter_mut() {
                for (zi, bi) in row.iter_mut().zip(bias) {
                    *zi = sigma.apply(*zi + bi);
                }
            }
            z
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grad_w: DMatrix<f64>,
    pub grad_bias: Vec<f64>,
}

/// Batch-mean loss and its exact gradients with respect to `W` and the bias.
pub fn loss_and_grads(spec: &ModelSpec, w: &DMatrix<f64>, bias: &[f64], x: &DMatrix<f64>) -> Result<LossAndGrads> {
    spec.check_shapes(w, bias, x)?;
    let batch = x.nrows();
    if batch == 0 {
        return Err(invalid("empty input batch"));
    }
    let scale = 1.0 / batch as f64;
    let sigma = spec.nonlinearity;
    let v = spec.importances.values();
    let h = x * w.transpose();
    match spec.family {
        ModelFamily::Regression => {
            let mut loss = 0.0;
            let mut grad_bias = 0.0;
            let mut dh = DMatrix::zeros(batch, spec.d);
            for b in 0..batch {
                let pred: f64 = h.row(b).iter().map(|&t| sigma.apply(t)).sum::<f64>() + bias[0];
                let target: f64 = x.row(b).iter().zip(v).map(|(&xi, vi)| vi * sigma.apply(xi)).sum();
                let r = pred - target;
                loss += r * r;
                let dr = 2.0 * r * scale;
                grad_bias += dr;
                for a in 0..spec.d {
                    dh[(b, a)] = dr * sigma.derivative(h[(b, a)]);
                }
            }
            Ok(LossAndGrads {
                loss: loss * scale,
                grad_w: dh.tr_mul(x),
                grad_bias: vec![grad_bias],
            })
        }
        ModelFamily::Autoencoder => {
            let n = spec.n();
            let mut dz = &h * w;
            let mut loss = 0.0;
            let mut grad_bias = vec![0.0; n];
            for b in 0..batch {
                for i in 0..n {
                    let z = dz[(b, i)] + bias[i];
                    let r = sigma.apply(z) - x[(b, i)];
                    loss += v[i] * r * r;
                    let g = 2.0 * v[i] * r * scale * sigma.derivative(z);
                    dz[(b, i)] = g;
                    grad_bias[i] += g;
                }
            }
            // Z = H W with H = X Wᵀ, so dW = Hᵀ dZ + W dZᵀ X.
            let grad_w = h.tr_mul(&dz) + w * dz.tr_mul(x);
            Ok(LossAndGrads {
                loss: loss * scale,
                grad_w,
                grad_bias,
            })
        }
    }
}
