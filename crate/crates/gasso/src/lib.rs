//! Generalized association study of two heterogeneous data blocks.
//!
//! Two matrices observed on the same samples — each column Gaussian,
//! Bernoulli, or Poisson — are modeled through low-rank natural-parameter
//! matrices sharing a joint score subspace. The crate provides the
//! alternating fitters, an association coefficient with a permutation test,
//! rank selection by entrywise cross-validation, annotation/retrieval
//! prediction, and a simulation benchmark harness. See `examples/` for
//! end-to-end usage.

pub mod archive;
pub mod association;
pub mod data;
pub mod error;
pub mod expfam;
pub mod fitter;
pub mod model;
pub mod numkit;
pub mod predictor;
pub mod rankselect;
pub mod simgen;

pub use error::{GassoError, Result};
pub use expfam::Family;
pub use model::{DataBlock, FitResult, GasParams, Ranks};
