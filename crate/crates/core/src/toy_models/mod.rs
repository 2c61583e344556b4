//! Sparse inputs, the regression and autoencoder toy models, and training.

mod distribution;
mod model;
mod train;

pub use distribution::{kurtosis_of, sample_inputs, sparsity_for_kurtosis, InputDistribution};
pub use model::{forward, loss_and_grads, LossAndGrads, ModelFamily, ModelSpec, Nonlinearity};
pub use train::{run_seed, train, train_cell, train_single, TrainConfig, TrainResult};
