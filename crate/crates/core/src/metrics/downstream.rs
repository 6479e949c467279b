//! Downstream-task metrics: class and subclass detection, mislabeling
//! detection, and shortcut detection.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attrib::AttributionMatrix;
use crate::data::{CorruptionRecord, Patch};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::stats::{auprc, descending_order, detection_auc, detection_curve, topk_indices};

use super::{Aggregator, AggregatorMode, MetricResult, MetricState};

/// Shared core of the top-1 agreement metrics: the fraction of test samples
/// whose highest-attributed training sample carries the matching label.
/// Constant rows count as misses, with a warning.
#[derive(Debug, Clone)]
struct TopOneAgreement {
    reference_labels: Vec<usize>,
    hits: usize,
    total: usize,
    constant_rows: usize,
    state: MetricState,
}

impl TopOneAgreement {
    fn new(reference_labels: Vec<usize>) -> Self {
        TopOneAgreement {
            reference_labels,
            hits: 0,
            total: 0,
            constant_rows: 0,
            state: MetricState::default(),
        }
    }

    fn update<F: Scalar>(
        &mut self,
        attributions: &AttributionMatrix<F>,
        test_labels: &[usize],
    ) -> Result<()> {
        self.state.check_update()?;
        if attributions.num_train() != self.reference_labels.len() {
            return Err(Error::ShapeMismatch {
                what: "attribution columns vs training labels",
                expected: self.reference_labels.len(),
                actual: attributions.num_train(),
            });
        }
        if attributions.num_test() != test_labels.len() {
            return Err(Error::ShapeMismatch {
                what: "attribution rows vs test labels",
                expected: attributions.num_test(),
                actual: test_labels.len(),
            });
        }
        for (t, &label) in test_labels.iter().enumerate() {
            let row = attributions.row(t);
            self.total += 1;
            if row.iter().all(|&v| v == row[0]) {
                self.constant_rows += 1;
                continue; // counted as a miss
            }
            let top = topk_indices(&row, 1)?[0];
            if self.reference_labels[top] == label {
                self.hits += 1;
            }
        }
        Ok(())
    }

    fn compute(&mut self, metric: &str) -> Result<MetricResult> {
        if self.total == 0 {
            return Err(Error::metric(format!(
                "{metric} compute called before any update"
            )));
        }
        self.state.finalize();
        let mut warnings = Vec::new();
        if self.constant_rows > 0 {
            warnings.push(format!(
                "{} constant attribution row(s) counted as misses",
                self.constant_rows
            ));
        }
        Ok(MetricResult {
            metric: metric.into(),
            score: self.hits as f64 / self.total as f64,
            num_samples: self.total,
            warnings,
            params: json!({}),
        })
    }
}

/// Ratio of test samples whose top-1 training sample has the same class
/// label as the explained output.
#[derive(Debug, Clone)]
pub struct ClassDetectionMetric {
    inner: TopOneAgreement,
}

impl ClassDetectionMetric {
    pub fn new(train_labels: Vec<usize>) -> Self {
        ClassDetectionMetric {
            inner: TopOneAgreement::new(train_labels),
        }
    }

    pub fn update<F: Scalar>(
        &mut self,
        attributions: &AttributionMatrix<F>,
        test_labels: &[usize],
    ) -> Result<()> {
        self.inner.update(attributions, test_labels)
    }

    pub fn compute(&mut self) -> Result<MetricResult> {
        self.inner.compute("class_detection")
    }

    pub fn reset(&mut self) {
        self.inner = TopOneAgreement::new(std::mem::take(&mut self.inner.reference_labels));
    }
}

/// Same agreement ratio, but against the original fine labels recorded
/// before class grouping.
#[derive(Debug, Clone)]
pub struct SubclassDetectionMetric {
    inner: TopOneAgreement,
}

impl SubclassDetectionMetric {
    pub fn new(train_subclass: Vec<usize>) -> Self {
        SubclassDetectionMetric {
            inner: TopOneAgreement::new(train_subclass),
        }
    }

    pub fn update<F: Scalar>(
        &mut self,
        attributions: &AttributionMatrix<F>,
        test_subclass: &[usize],
    ) -> Result<()> {
        self.inner.update(attributions, test_subclass)
    }

    pub fn compute(&mut self) -> Result<MetricResult> {
        self.inner.compute("subclass_detection")
    }

    pub fn reset(&mut self) {
        self.inner = TopOneAgreement::new(std::mem::take(&mut self.inner.reference_labels));
    }
}

/// How the global mislabeling ranking is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MislabelingMode {
    /// Rank by the explainer's self-influence vector.
    SelfInfluence,
    /// Rank by an aggregation of test-batch attribution rows.
    Aggregate(AggregatorMode),
}

/// Area under the cumulative mislabeling detection curve: inspect training
/// samples in descending score order and track the fraction of known
/// mislabeled samples found.
#[derive(Debug, Clone)]
pub struct MislabelingMetric<F> {
    positives: Vec<usize>,
    mode: MislabelingMode,
    aggregator: Option<Aggregator<F>>,
    global_scores: Option<Array1<F>>,
    num_train: usize,
    state: MetricState,
}

impl<F: Scalar> MislabelingMetric<F> {
    pub fn new(
        record: &CorruptionRecord<F>,
        num_train: usize,
        mode: MislabelingMode,
    ) -> Result<Self> {
        if record.mislabeled_idx.is_empty() {
            return Err(Error::config(
                "mislabeling metric requires a non-empty mislabeled index set",
            ));
        }
        if record.mislabeled_idx.iter().any(|&i| i >= num_train) {
            return Err(Error::config("mislabeled index out of range"));
        }
        let aggregator = match mode {
            MislabelingMode::Aggregate(agg_mode) => Some(Aggregator::new(agg_mode, num_train)),
            MislabelingMode::SelfInfluence => None,
        };
        Ok(MislabelingMetric {
            positives: record.mislabeled_idx.clone(),
            mode,
            aggregator,
            global_scores: None,
            num_train,
            state: MetricState::default(),
        })
    }

    /// Self-influence path: supply the global score vector once.
    pub fn update_scores(&mut self, scores: &Array1<F>) -> Result<()> {
        self.state.check_update()?;
        if self.mode != MislabelingMode::SelfInfluence {
            return Err(Error::metric(
                "update_scores is only valid in self_influence mode",
            ));
        }
        if scores.len() != self.num_train {
            return Err(Error::ShapeMismatch {
                what: "global score vector",
                expected: self.num_train,
                actual: scores.len(),
            });
        }
        if self.global_scores.is_some() {
            return Err(Error::metric("global scores already supplied"));
        }
        self.global_scores = Some(scores.clone());
        Ok(())
    }

    /// Aggregator path: fold in a batch of test attributions.
    pub fn update(&mut self, attributions: &AttributionMatrix<F>) -> Result<()> {
        self.state.check_update()?;
        match &mut self.aggregator {
            Some(agg) => agg.update(attributions),
            None => Err(Error::metric(
                "update(attributions) is only valid in aggregate mode",
            )),
        }
    }

    fn ranking(&self) -> Result<Vec<usize>> {
        let scores: Vec<F> = match self.mode {
            MislabelingMode::SelfInfluence => self
                .global_scores
                .as_ref()
                .ok_or_else(|| Error::metric("mislabeling compute called before any update"))?
                .to_vec(),
            MislabelingMode::Aggregate(_) => {
                let agg = self.aggregator.as_ref().expect("aggregate mode");
                if agg.rows_seen() == 0 {
                    return Err(Error::metric("mislabeling compute called before any update"));
                }
                agg.scores().to_vec()
            }
        };
        Ok(descending_order(&scores))
    }

    pub fn compute(&mut self) -> Result<MetricResult> {
        let ranking = self.ranking()?;
        self.state.finalize();
        let score = detection_auc(&ranking, &self.positives)?;
        Ok(MetricResult {
            metric: "mislabeling_detection".into(),
            score,
            num_samples: self.num_train,
            warnings: Vec::new(),
            params: json!({ "mode": mode_tag(self.mode) }),
        })
    }

    /// Cumulative detection curve for plotting.
    pub fn curve(&self) -> Result<Vec<(f64, f64)>> {
        let ranking = self.ranking()?;
        detection_curve(&ranking, &self.positives)
    }

    pub fn reset(&mut self) {
        self.global_scores = None;
        if let Some(agg) = &mut self.aggregator {
            *agg = Aggregator::new(agg.mode(), self.num_train);
        }
        self.state.reset();
    }
}

fn mode_tag(mode: MislabelingMode) -> &'static str {
    match mode {
        MislabelingMode::SelfInfluence => "self_influence",
        MislabelingMode::Aggregate(AggregatorMode::Sum) => "aggregate_sum",
        MislabelingMode::Aggregate(AggregatorMode::SumAbs) => "aggregate_sum_abs",
    }
}

/// Mean average precision of ranking the known shortcutted training samples
/// above clean ones, over test samples that trigger the shortcut.
#[derive(Debug, Clone)]
pub struct ShortcutDetectionMetric {
    positives: Vec<usize>,
    per_row_ap: Vec<f64>,
    state: MetricState,
}

impl ShortcutDetectionMetric {
    pub fn new<F: Scalar>(record: &CorruptionRecord<F>) -> Result<Self> {
        if record.shortcut_idx.is_empty() {
            return Err(Error::config(
                "shortcut metric requires a non-empty shortcut index set",
            ));
        }
        Ok(ShortcutDetectionMetric {
            positives: record.shortcut_idx.clone(),
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
                "shortcut detection has no evidence: no test rows survived the shortcut filter",
            ));
        }
        self.state.finalize();
        Ok(MetricResult {
            metric: "shortcut_detection".into(),
            score: self.per_row_ap.iter().sum::<f64>() / self.per_row_ap.len() as f64,
            num_samples: self.per_row_ap.len(),
            warnings: Vec::new(),
            params: json!({ "num_shortcut": self.positives.len() }),
        })
    }

    pub fn reset(&mut self) {
        self.per_row_ap.clear();
        self.state.reset();
    }
}

/// Filter for shortcut-triggering test samples: the patched input must be
/// pulled to the shortcut class while the clean input is not.
pub fn shortcut_filter<F: Scalar>(
    model: &Model<F>,
    patch: &Patch<F>,
    shortcut_class: usize,
    x: &ArrayView1<F>,
) -> Result<bool> {
    let clean_pred = model.predict(x)?;
    let patched = patch.apply(&x.to_owned());
    let patched_pred = model.predict(&patched.view())?;
    Ok(patched_pred == shortcut_class && clean_pred != shortcut_class)
}
