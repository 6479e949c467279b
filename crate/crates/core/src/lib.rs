//! Training-data attribution for small classifiers, with the evaluation
//! machinery to judge the attributions: ground-truth comparisons against
//! retraining, downstream detection tasks, and heuristic sanity checks, all
//! run inside generated controlled environments.
//!
//! Organization:
//! - [`nn`] — tiny differentiable classifiers: analytic gradients, an exact
//!   damped empirical-risk Hessian, deterministic SGD with checkpointing.
//! - [`data`] — synthetic dataset generation and controlled corruptions with
//!   exact ground-truth records.
//! - [`attrib`] — the attribution methods behind one `Explainer` interface.
//! - [`stats`] — rank and retrieval statistics shared by the metrics.
//! - [`metrics`] — stateful `update`/`compute` evaluation metrics.
//! - [`bench`] — benchmark bundles: generate, assemble, save/load, evaluate.
//!
//! The numeric core is generic over the scalar type (see [`scalar::Scalar`]);
//! the aliases below fix the shipped default of `f64`, which the Hessian
//! solves need. The [`dual`] module supplies the forward-mode scalar that
//! turns the analytic gradient kernels into exact Hessian columns.

pub mod attrib;
pub mod bench;
pub mod data;
pub mod dual;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};

/// Default-precision aliases. All shipped tooling works in `f64`.
pub type Dataset = data::Dataset<f64>;
pub type CorruptionRecord = data::CorruptionRecord<f64>;
pub type Patch = data::Patch<f64>;
pub type Model = nn::Model<f64>;
pub type Checkpoint = nn::Checkpoint<f64>;
pub type AttributionMatrix = attrib::AttributionMatrix<f64>;
pub type BenchmarkBundle = bench::BenchmarkBundle<f64>;
pub type LdsCache = bench::LdsCache<f64>;
