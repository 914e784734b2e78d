//! Continual-learning associative memory built on hierarchical predictive
//! coding networks with Bayesian (matrix-normal) weight beliefs.
//!
//! - [`gaussian`] — conjugate updates, diffusion and predictive densities for one layer
//! - [`model`] — network shape, particles, mixture log density and its gradient
//! - [`memory`] — `write`, `read` and `forget`
//! - [`baselines`] — modern Hopfield network and point-weight predictive coding network
//! - [`bench`] — datasets, corruptions, metrics and the experiment runner
//! - [`persist`] — binary model file
//! - [`cli`] — command-line driver

pub mod activation;
pub mod baselines;
pub mod bench;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod memory;
pub mod model;
pub mod optim;
pub mod persist;

pub use activation::Activation;
pub use error::{MemoryError, Result};
pub use memory::{HiddenInit, Query, ReadConfig};
pub use model::{ActivationStack, MemoryConfig, MemoryState, Mixture, NetworkShape, Particle};
pub use optim::OptimizerConfig;
