//! Heuristic sanity checks: mixed-dataset provenance, sensitivity to model
//! randomization, and top-k cardinality.

use std::collections::BTreeSet;

use serde_json::json;

use crate::attrib::AttributionMatrix;
use crate::data::CorruptionRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::{auprc, spearman, topk_indices};

use super::{MetricResult, MetricState};

/// Mean average precision of ranking the adversarial training samples above
/// base samples, over correctly predicted adversarial test samples.
#[derive(Debug, Clone)]
pub struct MixedDatasetsMetric {
    positives: Vec<usize>,
    per_row_ap: Vec<f64>,
    state: MetricState,
}

impl MixedDatasetsMetric {
    pub fn new<F: Scalar>(record: &CorruptionRecord<F>) -> Result<Self> {
        if record.adversarial_idx.is_empty() {
            return Err(Error::config(
                "mixed-datasets metric requires a non-empty adversarial index set",
            ));
        }
        Ok(MixedDatasetsMetric {
            positives: record.adversarial_idx.clone(),
            per_row_ap: Vec::new(),
            state: MetricState::default(),
        })
    }

    pub fn update<F: Scalar>(&mut self, attributions: &AttributionMatrix<F>) -> Result<()> {
        self.state.check_update()?;
        for t in 0..attributions.num_test() {
            self.per_row_ap
                .push(auprc(&attributions.row(t), &self.positives)?);
        }
        Ok(())
    }

    pub fn compute(&mut self) -> Result<MetricResult> {
        if self.per_row_ap.is_empty() {
            return Err(Error::metric(
                "mixed-datasets has no evidence: no correctly predicted adversarial test samples",
            ));
        }
        self.state.finalize();
        Ok(MetricResult {
            metric: "mixed_datasets".into(),
            score: self.per_row_ap.iter().sum::<f64>() / self.per_row_ap.len() as f64,
            num_samples: self.per_row_ap.len(),
            warnings: Vec::new(),
            params: json!({ "num_adversarial": self.positives.len() }),
        })
    }

    pub fn reset(&mut self) {
        self.per_row_ap.clear();
        self.state.reset();
    }
}

/// Mean Spearman correlation between attributions from the original model
/// and a parameter-randomized one. Lower is better: explanations should
/// depend on what the model has learned.
#[derive(Debug, Clone, Default)]
pub struct ModelRandomizationMetric {
    rhos: Vec<f64>,
    skipped_constant: usize,
    state: MetricState,
}

impl ModelRandomizationMetric {
    pub fn new() -> Self {
        ModelRandomizationMetric::default()
    }

    pub fn update<F: Scalar>(
        &mut self,
        original: &AttributionMatrix<F>,
        randomized: &AttributionMatrix<F>,
    ) -> Result<()> {
        self.state.check_update()?;
        if original.num_test() != randomized.num_test()
            || original.num_train() != randomized.num_train()
        {
            return Err(Error::ShapeMismatch {
                what: "randomized attribution matrix",
                expected: original.num_test() * original.num_train(),
                actual: randomized.num_test() * randomized.num_train(),
            });
        }
        for t in 0..original.num_test() {
            match spearman(&original.row(t), &randomized.row(t)) {
                Ok(rho) => self.rhos.push(rho),
                Err(Error::Numeric(_)) => self.skipped_constant += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn compute(&mut self) -> Result<MetricResult> {
        if self.rhos.is_empty() && self.skipped_constant == 0 {
            return Err(Error::metric(
                "model randomization compute called before any update",
            ));
        }
        if self.rhos.is_empty() {
            return Err(Error::metric(
                "model randomization has no usable rows: every attribution row was constant",
            ));
        }
        self.state.finalize();
        let mut warnings = Vec::new();
        if self.skipped_constant > 0 {
            warnings.push(format!(
                "skipped {} constant attribution row(s)",
                self.skipped_constant
            ));
        }
        Ok(MetricResult {
            metric: "model_randomization".into(),
            score: self.rhos.iter().sum::<f64>() / self.rhos.len() as f64,
            num_samples: self.rhos.len(),
            warnings,
            params: json!({}),
        })
    }

    pub fn reset(&mut self) {
        *self = ModelRandomizationMetric::default();
    }
}

/// Cardinality of the union of per-row top-k sets, relative to the maximum
/// possible `num_test · k`.
#[derive(Debug, Clone)]
pub struct TopKCardinalityMetric {
    k: usize,
    union: BTreeSet<usize>,
    num_test: usize,
    state: MetricState,
}

impl TopKCardinalityMetric {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("top-k cardinality requires k >= 1"));
        }
        Ok(TopKCardinalityMetric {
            k,
            union: BTreeSet::new(),
            num_test: 0,
            state: MetricState::default(),
        })
    }

    pub fn update<F: Scalar>(&mut self, attributions: &AttributionMatrix<F>) -> Result<()> {
        self.state.check_update()?;
        if self.k > attributions.num_train() {
            return Err(Error::config(format!(
                "top-k cardinality: k={} exceeds the training set size {}",
                self.k,
                attributions.num_train()
            )));
        }
        for t in 0..attributions.num_test() {
            self.union.extend(topk_indices(&attributions.row(t), self.k)?);
            self.num_test += 1;
        }
        Ok(())
    }

    pub fn compute(&mut self) -> Result<MetricResult> {
        if self.num_test == 0 {
            return Err(Error::metric(
                "top-k cardinality compute called before any update",
            ));
        }
        self.state.finalize();
        Ok(MetricResult {
            metric: "topk_cardinality".into(),
            score: self.union.len() as f64 / (self.num_test * self.k) as f64,
            num_samples: self.num_test,
            warnings: Vec::new(),
            params: json!({ "k": self.k }),
        })
    }

    pub fn reset(&mut self) {
        self.union.clear();
        self.num_test = 0;
        self.state.reset();
    }
}
