//! Ground-truth evaluation: attributions against actual retraining outcomes.

use ndarray::Array2;
use serde_json::json;

use crate::attrib::AttributionMatrix;
use crate::data::SubsetSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::spearman;

use super::{MetricResult, MetricState};

/// Linear datamodeling score.
///
/// For each test sample, the additive prediction for subset `D'_j` is the
/// sum of that sample's attributions over the subset members; the per-sample
/// score is the Spearman correlation between these predictions and the
/// outputs of models actually retrained on each subset. The final score
/// averages over test samples.
#[derive(Debug, Clone, Default)]
pub struct LdsMetric {
    per_test_rho: Vec<f64>,
    skipped_constant: usize,
    state: MetricState,
}

impl LdsMetric {
    pub fn new() -> Self {
        LdsMetric::default()
    }

    /// `retrained_outputs[t][j]` is the model output for test sample `t`
    /// after retraining on subset `j`; rows align with the attribution rows
    /// and columns with `subsets.masks`.
    pub fn update<F: Scalar>(
        &mut self,
        attributions: &AttributionMatrix<F>,
        retrained_outputs: &Array2<F>,
        subsets: &SubsetSpec,
    ) -> Result<()> {
        self.state.check_update()?;
        let m = subsets.masks.len();
        if retrained_outputs.nrows() != attributions.num_test() {
            return Err(Error::ShapeMismatch {
                what: "retrained output rows",
                expected: attributions.num_test(),
                actual: retrained_outputs.nrows(),
            });
        }
        if retrained_outputs.ncols() != m {
            return Err(Error::ShapeMismatch {
                what: "retrained output columns",
                expected: m,
                actual: retrained_outputs.ncols(),
            });
        }
        for mask in &subsets.masks {
            if mask.len() != attributions.num_train() {
                return Err(Error::ShapeMismatch {
                    what: "subset mask length",
                    expected: attributions.num_train(),
                    actual: mask.len(),
                });
            }
        }

        for t in 0..attributions.num_test() {
            let row = attributions.values.row(t);
            let predictions: Vec<F> = subsets
                .masks
                .iter()
                .map(|mask| {
                    let mut s = F::zero();
                    for (i, &keep) in mask.iter().enumerate() {
                        if keep {
                            s = s + row[i];
                        }
                    }
                    s
                })
                .collect();
            let actual: Vec<F> = retrained_outputs.row(t).to_vec();
            match spearman(&predictions, &actual) {
                Ok(rho) => self.per_test_rho.push(rho),
                Err(Error::Numeric(_)) => self.skipped_constant += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn compute(&mut self) -> Result<MetricResult> {
        if self.per_test_rho.is_empty() && self.skipped_constant == 0 {
            return Err(Error::metric("lds compute called before any update"));
        }
        if self.per_test_rho.is_empty() {
            return Err(Error::metric(
                "lds has no usable test samples: every row had a constant prediction or output vector",
            ));
        }
        self.state.finalize();
        let score = self.per_test_rho.iter().sum::<f64>() / self.per_test_rho.len() as f64;
        let mut warnings = Vec::new();
        if self.skipped_constant > 0 {
            warnings.push(format!(
                "skipped {} test sample(s) with constant predictions or outputs",
                self.skipped_constant
            ));
        }
        Ok(MetricResult {
            metric: "lds".into(),
            score,
            num_samples: self.per_test_rho.len(),
            warnings,
            params: json!({}),
        })
    }

    pub fn reset(&mut self) {
        *self = LdsMetric::default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrib::{Explainer, RandomExplainer};
    use crate::data::{make_blobs, sample_subsets};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    /// Exactly additive toy: output of a subset-trained "model" is defined
    /// as the sum of per-sample contributions c_i·k(z, z_i), and the
    /// matching attributor reports exactly those contributions.
    #[test]
    fn exactly_additive_toy_scores_one() {
        let mut rng = rng_from_seed(3);
        let n = 40;
        let num_test = 6;
        let m = 24;
        let (ds, _) = make_blobs::<f64>(n, 2, 2, 5.0, 1, 9).unwrap();
        let subsets = sample_subsets(&ds, m, 0.5, 44).unwrap();

        let mut values = Array2::<f64>::zeros((num_test, n));
        for t in 0..num_test {
            for i in 0..n {
                values[(t, i)] = rng.random_range(-1.0..1.0);
            }
        }
        let attributions = AttributionMatrix::new(
            values.clone(),
            vec![0; num_test],
            "toy".into(),
            (0..n).collect(),
        )
        .unwrap();

        let mut outputs = Array2::<f64>::zeros((num_test, m));
        for t in 0..num_test {
            for (j, mask) in subsets.masks.iter().enumerate() {
                outputs[(t, j)] = mask
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &keep)| keep.then(|| values[(t, i)]))
                    .sum();
            }
        }

        let mut metric = LdsMetric::new();
        metric.update(&attributions, &outputs, &subsets).unwrap();
        let result = metric.compute().unwrap();
        assert!((result.score - 1.0).abs() < 1e-9);
        assert_eq!(result.num_samples, num_test);
    }

    #[test]
    fn negating_attributions_negates_the_score() {
        let mut rng = rng_from_seed(8);
        let n = 30;
        let (ds, _) = make_blobs::<f64>(n, 2, 2, 5.0, 1, 2).unwrap();
        let subsets = sample_subsets(&ds, 16, 0.5, 5).unwrap();
        let values =
            Array2::from_shape_fn((4, n), |_| rng.random_range(-1.0..1.0f64));
        let pos =
            AttributionMatrix::new(values.clone(), vec![0; 4], "toy".into(), (0..n).collect())
                .unwrap();
        let neg = AttributionMatrix::new(
            values.mapv(|v| -v),
            vec![0; 4],
            "toy".into(),
            (0..n).collect(),
        )
        .unwrap();
        let mut outputs = Array2::<f64>::zeros((4, 16));
        for t in 0..4 {
            for (j, mask) in subsets.masks.iter().enumerate() {
                outputs[(t, j)] = mask
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &keep)| keep.then(|| values[(t, i)]))
                    .sum::<f64>()
                    + rng.random_range(-0.01..0.01);
            }
        }
        let mut mp = LdsMetric::new();
        mp.update(&pos, &outputs, &subsets).unwrap();
        let rp = mp.compute().unwrap().score;
        let mut mn = LdsMetric::new();
        mn.update(&neg, &outputs, &subsets).unwrap();
        let rn = mn.compute().unwrap().score;
        assert!((rp + rn).abs() < 1e-12);
    }

    #[test]
    fn random_attributor_scores_near_zero() {
        let n = 60;
        let m = 64;
        let (ds, _) = make_blobs::<f64>(n, 2, 2, 5.0, 1, 7).unwrap();
        let subsets = sample_subsets(&ds, m, 0.5, 21).unwrap();
        let explainer = RandomExplainer::new(13, n);
        let batch = ds.features().slice(ndarray::s![..10, ..]).to_owned();
        let attributions = Explainer::<f64>::explain(&explainer, &batch, &vec![0; 10]).unwrap();
        // genuine retrained outputs replaced by an independent random draw:
        // any correlation is spurious
        let mut rng = rng_from_seed(99);
        let outputs = Array2::from_shape_fn((10, m), |_| rng.random_range(-1.0..1.0f64));
        let mut metric = LdsMetric::new();
        metric.update(&attributions, &outputs, &subsets).unwrap();
        let result = metric.compute().unwrap();
        assert!(result.score.abs() < 0.2, "score {}", result.score);
    }

    #[test]
    fn compute_without_updates_errors_and_mean_is_exact() {
        let mut metric = LdsMetric::new();
        assert!(metric.compute().is_err());
        metric.per_test_rho = vec![1.0, 0.5];
        assert_eq!(metric.compute().unwrap().score, 0.75);
        // idempotent
        assert_eq!(metric.compute().unwrap().score, 0.75);
    }

    #[test]
    fn update_after_compute_requires_reset() {
        let mut metric = LdsMetric::new();
        metric.per_test_rho = vec![0.5];
        metric.compute().unwrap();
        let (ds, _) = make_blobs::<f64>(10, 2, 2, 5.0, 1, 2).unwrap();
        let subsets = sample_subsets(&ds, 4, 0.5, 5).unwrap();
        let attributions = AttributionMatrix::new(
            Array2::from_elem((1, 10), 1.0),
            vec![0],
            "toy".into(),
            (0..10).collect(),
        )
        .unwrap();
        let outputs = Array2::from_shape_fn((1, 4), |(_, j)| j as f64);
        assert!(metric.update(&attributions, &outputs, &subsets).is_err());
        metric.reset();
        metric.update(&attributions, &outputs, &subsets).unwrap();
    }
}
