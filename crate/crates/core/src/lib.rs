//! Feature capacity, optimal capacity allocation and superposition phase
//! diagrams for small embedding models.
//!
//! An embedding matrix `W` of shape `D x N` stores one column per input
//! feature. The capacity of feature `i`,
//!
//! ```text
//! C_i = (W_i·W_i)² / Σ_j (W_i·W_j)²
//! ```
//!
//! is the fraction of an embedding dimension it occupies. Capacities lie in
//! `[0, 1]` and sum to at most `D`.

pub mod capacity;
pub mod error;
pub mod feasibility;
pub mod fixtures;
pub mod fmt;
pub mod geometry;
pub mod matrix;
pub mod phase_lab;
pub mod quadratic;
pub mod toy_models;

pub use capacity::{
    alt_capacity_vector, capacity_vector, feature_capacity, mc_correlation_capacity, total_capacity,
    CapacityVector, McCapacity,
};
pub use error::{Error, Result};
pub use feasibility::{realize_allocation, realize_capacities, split_pair};
pub use geometry::{
    block_decomposition, is_efficient, singular_value_decomposition, verify_block_form, Block,
    BlockDecomposition, Svd,
};
pub use matrix::EmbeddingMatrix;
pub use phase_lab::PhaseGrid;
pub use quadratic::{
    covariance_diagnostics, equal_importance_lambda, expected_loss_capacity_form,
    expected_loss_closed_form, marginal_loss, optimal_embedding_norm, phase_boundaries,
    solve_allocation, AllocationSolution, ImportanceVector, Phase, PhaseBoundaries,
};
pub use toy_models::{
    kurtosis_of, sample_inputs, train, InputDistribution, ModelFamily, ModelSpec, Nonlinearity,
    TrainConfig, TrainResult,
};
