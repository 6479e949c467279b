//! Stateful evaluation metrics over attribution matrices.
//!
//! A metric accumulates test batches through its update method and produces
//! a structured [`MetricResult`] from `compute`. Computing freezes the
//! state: further updates are rejected until `reset`, while `compute` itself
//! is idempotent. Every metric is invariant to how updates are batched.

mod downstream;
mod ground_truth;
mod heuristics;

pub use downstream::{
    shortcut_filter, ClassDetectionMetric, MislabelingMetric, MislabelingMode,
    ShortcutDetectionMetric, SubclassDetectionMetric,
};
pub use ground_truth::LdsMetric;
pub use heuristics::{MixedDatasetsMetric, ModelRandomizationMetric, TopKCardinalityMetric};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::attrib::AttributionMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::descending_order;

/// Structured outcome of a metric computation. Carrying the sample count
/// and any skipped-row warnings keeps degenerate-input policies auditable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: String,
    pub score: f64,
    pub num_samples: usize,
    pub warnings: Vec<String>,
    pub params: serde_json::Value,
}

/// Shared freeze/reset state machine.
#[derive(Debug, Clone, Default)]
pub(crate) struct MetricState {
    finalized: bool,
}

impl MetricState {
    pub(crate) fn check_update(&self) -> Result<()> {
        if self.finalized {
            return Err(Error::metric(
                "update rejected after compute; call reset() to reuse the metric",
            ));
        }
        Ok(())
    }

    pub(crate) fn finalize(&mut self) {
        self.finalized = true;
    }

    pub(crate) fn reset(&mut self) {
        self.finalized = false;
    }
}

/// Reduction of per-test attribution rows into one global training-sample
/// score vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorMode {
    Sum,
    SumAbs,
}

/// Accumulates attribution rows into a global score vector of length `n`.
/// Accumulation is a commutative sum, so the order of updates is irrelevant.
#[derive(Debug, Clone)]
pub struct Aggregator<F> {
    mode: AggregatorMode,
    acc: Array1<F>,
    rows_seen: usize,
}

impl<F: Scalar> Aggregator<F> {
    pub fn new(mode: AggregatorMode, num_train: usize) -> Self {
        Aggregator {
            mode,
            acc: Array1::zeros(num_train),
            rows_seen: 0,
        }
    }

    pub fn mode(&self) -> AggregatorMode {
        self.mode
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    pub fn update(&mut self, attributions: &AttributionMatrix<F>) -> Result<()> {
        if attributions.num_train() != self.acc.len() {
            return Err(Error::ShapeMismatch {
                what: "aggregator columns",
                expected: self.acc.len(),
                actual: attributions.num_train(),
            });
        }
        for row in attributions.values.rows() {
            for (a, &v) in self.acc.iter_mut().zip(row.iter()) {
                *a = *a
                    + match self.mode {
                        AggregatorMode::Sum => v,
                        AggregatorMode::SumAbs => v.abs(),
                    };
            }
        }
        self.rows_seen += attributions.num_test();
        Ok(())
    }

    pub fn scores(&self) -> &Array1<F> {
        &self.acc
    }

    /// Global ranking by descending aggregated score, ties to the lower id.
    pub fn ranking(&self) -> Vec<usize> {
        descending_order(self.acc.as_slice().expect("contiguous aggregator"))
    }
}
