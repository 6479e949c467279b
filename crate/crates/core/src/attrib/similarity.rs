//! Attribution by similarity of penultimate-layer representations.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::scalar::Scalar;

use super::{check_batch, AttributionMatrix, Explainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMeasure {
    Dot,
    Cosine,
}

pub struct SimilarityExplainer<F> {
    model: Model<F>,
    measure: SimilarityMeasure,
    /// n x p matrix of training features h(z_i)
    train_features: Array2<F>,
    train_norms: Vec<F>,
}

impl<F: Scalar> SimilarityExplainer<F> {
    pub fn new(model: Model<F>, dataset: &Dataset<F>, measure: SimilarityMeasure) -> Result<Self> {
        let p = model.arch().feature_dim();
        let mut feats = Array2::<F>::zeros((dataset.len(), p));
        let mut norms = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            let (x, _) = dataset.sample(i);
            let h = model.features(&x)?;
            let norm = h.iter().map(|&v| v * v).sum::<F>().sqrt();
            if measure == SimilarityMeasure::Cosine && norm == F::zero() {
                return Err(Error::numeric(format!(
                    "cosine similarity undefined: training sample {i} has zero-norm features"
                )));
            }
            feats.row_mut(i).assign(&h);
            norms.push(norm);
        }
        Ok(SimilarityExplainer {
            model,
            measure,
            train_features: feats,
            train_norms: norms,
        })
    }

    fn row_for(&self, h: &Array1<F>, test_idx: usize) -> Result<Array1<F>> {
        let dots = self.train_features.dot(h);
        match self.measure {
            SimilarityMeasure::Dot => Ok(dots),
            SimilarityMeasure::Cosine => {
                let norm = h.iter().map(|&v| v * v).sum::<F>().sqrt();
                if norm == F::zero() {
                    return Err(Error::numeric(format!(
                        "cosine similarity undefined: test sample {test_idx} has zero-norm features"
                    )));
                }
                let one = F::one();
                Ok(Array1::from_iter(dots.iter().zip(&self.train_norms).map(
                    |(&d, &tn)| (d / (norm * tn)).max(-one).min(one),
                )))
            }
        }
    }
}

impl<F: Scalar> Explainer<F> for SimilarityExplainer<F> {
    fn name(&self) -> String {
        match self.measure {
            SimilarityMeasure::Dot => "similarity_dot".into(),
            SimilarityMeasure::Cosine => "similarity_cosine".into(),
        }
    }

    fn num_train(&self) -> usize {
        self.train_features.nrows()
    }

    fn explain(&self, inputs: &Array2<F>, targets: &[usize]) -> Result<AttributionMatrix<F>> {
        check_batch(&self.model, inputs, targets)?;
        let mut values = Array2::<F>::zeros((inputs.nrows(), self.num_train()));
        for t in 0..inputs.nrows() {
            let h = self.model.features(&inputs.row(t))?;
            values.row_mut(t).assign(&self.row_for(&h, t)?);
        }
        AttributionMatrix::new(
            values,
            targets.to_vec(),
            self.name(),
            (0..self.num_train()).collect(),
        )
    }

    fn self_influence(&self) -> Result<Array1<F>> {
        match self.measure {
            // h_i · h_i = ‖h_i‖²
            SimilarityMeasure::Dot => Ok(Array1::from_iter((0..self.num_train()).map(|i| {
                let row = self.train_features.row(i);
                row.dot(&row)
            }))),
            // cos(v, v) = 1 identically
            SimilarityMeasure::Cosine => Ok(Array1::from_elem(self.num_train(), F::one())),
        }
    }
}
