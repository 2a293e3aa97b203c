//! Bi-objective neural architecture search over a cell-based CNN space.
//!
//! Candidates are scored by Random-Weight Evaluation: the convolutional
//! backbone is decoded from a 40-integer genome, initialized once with
//! random weights and frozen, and only an ensemble of linear classifiers is
//! trained on the extracted features. The resulting validation error and the
//! analytic FLOPs count form the objective pair minimized by NSGA-II.
//!
//! Module map:
//!
//! - [`search_space`]: genome encoding, bounds, decoding into a [`NetworkPlan`].
//! - [`nn`]: forward-only tensor engine, random initialization, feature extraction.
//! - [`complexity`]: FLOPs and parameter counting.
//! - [`rwe`]: fold splitting, linear-head training, majority-vote ensembling.
//! - [`moea`]: NSGA-II search loop.
//! - [`data`]: CIFAR-10 binary loader, normalization, stratified splitting.
//! - [`analysis`]: Spearman correlation study and Pareto-front extraction.
//! - [`cli`]: command-line front end.
//!
//! With the default `parallel` feature, batch-level work runs on rayon; with
//! it disabled every [`Exec`] falls back to the sequential path.

pub mod analysis;
pub mod cli;
pub mod complexity;
pub mod data;
mod error;
pub mod exec;
pub mod moea;
pub mod nn;
pub mod rng;
pub mod rwe;
pub mod search_space;

pub use error::{Error, Result};
pub use exec::Exec;
pub use search_space::{Genome, MacroConfig, NetworkPlan, OpCode};

/// Version string embedded in every output artifact.
pub const VERSION: &str = concat!("rwe-nas ", env!("CARGO_PKG_VERSION"));
