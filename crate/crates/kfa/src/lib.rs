//! Bayesian multi-view factor analysis with kernelized observations:
//! mean-field variational inference over a shared latent space, ARD pruning
//! of latent factors and relevance vectors, learned per-feature kernel
//! relevances and semi-supervised prediction.

pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod relevance;

pub use error::{KfaError, Result};
