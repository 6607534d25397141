//! Sequential Monte Carlo with a per-step interaction matrix.
//!
//! Each step reweights particles by their potentials, mixes the weights
//! through a row-stochastic interaction matrix and draws every particle's
//! ancestor from the corresponding row. Identity gives sequential importance
//! sampling, the uniform matrix gives the bootstrap filter, and block-diagonal
//! matrices chosen on the fly keep the effective sample size above a
//! threshold while interacting as little as possible.

pub mod adaptation;
pub mod engine;
pub mod error;
pub mod interaction;
pub mod model;
pub mod numeric;
pub mod oracles;

pub use adaptation::{AdaptationOutput, AdaptationPolicy, AdaptationRule, OpCounter, PolicySpec};
pub use engine::{propagate_log_weights, run, run_with_observer, split_seed, ParticleSystem, RngLayout, RunOptions, RunTrace, StepDiagnostics, StepRecord};
pub use error::{Error, Result};
pub use interaction::{BlockPartition, DenseStochasticMatrix, InteractionSpec};
pub use model::{
    simulate_data, Emission, FiniteStateModel, HmmModel, LinearGaussianModel, ModelSpec, ObservationRecord, StateKind, StateValue,
    StochasticVolatilityModel, TestFunction,
};
