//! Adam training for the toy models.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::distribution::InputDistribution;
use super::model::{loss_and_grads, ModelSpec};
use crate::capacity::{capacity_vector, CapacityVector};
use crate::error::{invalid, Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Number of window means kept in [`TrainResult::loss_trace`].
const TRACE_WINDOWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    /// Standard deviation of the Gaussian initial weights; `1/√D` when unset.
    pub init_std: Option<f64>,
    /// Independent runs per training call; the lowest final loss wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            batch: 1024,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            cosine_decay: false,
            init_std: None,
            restarts: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.restarts == 0 {
            return Err(invalid("steps, batch and restarts must all be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(invalid("Adam epsilon must be > 0"));
        }
        if let Some(s) = self.init_std {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid(format!("init_std must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Seed for one run inside a sweep.
pub fn run_seed(base: u64, cell_index: usize, restart: usize) -> u64 {
    base.wrapping_add(cell_index as u64 * 1000)
        .wrapping_add(restart as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub final_weights: EmbeddingMatrix,
    /// One entry for regression, `N` for the autoencoder.
    pub bias: Vec<f64>,
    /// Mean training loss over the last 1% of steps.
    pub final_loss: f64,
    pub capacity: CapacityVector,
    pub steps_run: usize,
    /// Seed of the run that produced these weights.
    pub seed: u64,
    /// Training loss averaged over consecutive windows of steps.
    pub loss_trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step<'a>(&mut self, cfg: &TrainConfig, lr: f64, params: impl Iterator<Item = (&'a mut f64, f64)>) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// One training run with the given seed, ignoring `config.restarts`.
pub fn train_single(spec: &ModelSpec, dist: &InputDistribution, config: &TrainConfig, seed: u64) -> Result<TrainResult> {
    config.validate()?;
    let (n, d) = (spec.n(), spec.d());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = config.init_std.unwrap_or(1.0 / (d as f64).sqrt());
    let normal = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
    let mut w = DMatrix::from_fn(d, n, |_, _| normal.sample(&mut rng));
    let mut bias = vec![0.0; spec.bias_len()];
    let mut adam = Adam::new(w.len() + bias.len());

    let tail = (config.steps / 100).max(1);
    let window = config.steps.div_ceil(TRACE_WINDOWS);
    let mut tail_sum = 0.0;
    let mut window_sum = 0.0;
    let mut trace = Vec::with_capacity(TRACE_WINDOWS);

    for step in 0..config.steps {
        let x = dist.sample_batch(&mut rng, config.batch, n);
        let out = loss_and_grads(spec, &w, &bias, &x)?;
        if !out.loss.is_finite() || out.grad_w.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss: out.loss });
        }
        let lr = if config.cosine_decay {
            let frac = step as f64 / config.steps as f64;
            0.5 * config.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
        } else {
            config.learning_rate
        };
        let grads = out.grad_w.iter().chain(&out.grad_bias).copied();
        adam.step(config, lr, w.iter_mut().chain(bias.iter_mut()).zip(grads));

        if step >= config.steps - tail {
            tail_sum += out.loss;
        }
        window_sum += out.loss;
        if (step + 1) % window == 0 || step + 1 == config.steps {
            let len = (step % window) + 1;
            trace.push(window_sum / len as f64);
            window_sum = 0.0;
        }
    }

    if w.iter().chain(&bias).any(|p| !p.is_finite()) {
        return Err(Error::Diverged {
            step: config.steps,
            loss: f64::NAN,
        });
    }
    let final_weights = EmbeddingMatrix::new(w)?;
    Ok(TrainResult {
        capacity: capacity_vector(&final_weights),
        final_weights,
        bias,
        final_loss: tail_sum / tail as f64,
        steps_run: config.steps,
        seed,
        loss_trace: trace,
    })
}

/// Best of `config.restarts` runs for grid cell `cell_index`.
///
/// A restart that diverges is skipped; the error is returned only when every
/// restart diverges.
pub fn train_cell(spec: &ModelSpec, dist: &InputDistribution, config: &TrainConfig, cell_index: usize) -> Result<TrainResult> {
    config.validate()?;
    let mut best: Option<TrainResult> = None;
    let mut last_err = None;
    for restart in 0..config.restarts {
        match train_single(spec, dist, config, run_seed(config.seed, cell_index, restart)) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.final_loss < b.final_loss) {
                    best = Some(r);
                }
            }
            Err(e @ Error::Diverged { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}

/// Train with restarts seeded from `config.seed`.
pub fn train(spec: &ModelSpec, dist: &InputDistribution, config: &TrainConfig) -> Result<TrainResult> {
    train_cell(spec, dist, config, 0)
}
