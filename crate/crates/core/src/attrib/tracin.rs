//! TracIn: learning-rate-weighted gradient dot products summed over the
//! training checkpoints, with optional last-layer restriction and a shared
//! random projection of the gradients.

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Model, ModelArch, ParamScope};
use crate::scalar::Scalar;

use super::{check_batch, gaussian_projection, AttributionMatrix, Explainer};

pub struct TracinExplainer<F> {
    models: Vec<Model<F>>,
    learning_rates: Vec<F>,
    scope: ParamScope,
    projection: Option<Array2<F>>,
    projection_dim: usize,
    /// Per checkpoint: n x m matrix of (projected) training gradients.
    train_grads: Vec<Array2<F>>,
}

impl<F: Scalar> TracinExplainer<F> {
    pub fn new(
        arch: ModelArch,
        dataset: &Dataset<F>,
        checkpoints: &[Checkpoint<F>],
        scope: ParamScope,
        projection_dim: usize,
        projection_seed: u64,
    ) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::incompatible(
                "tracin requires at least one training checkpoint",
            ));
        }
        let scope_len = scope.range(&arch).len();
        let projection = if projection_dim > 0 {
            Some(gaussian_projection::<F>(
                projection_dim,
                scope_len,
                projection_seed,
            ))
        } else {
            None
        };

        let mut models = Vec::with_capacity(checkpoints.len());
        let mut learning_rates = Vec::with_capacity(checkpoints.len());
        let mut train_grads = Vec::with_capacity(checkpoints.len());
        for ckpt in checkpoints {
            let model = Model::new(arch.clone(), ckpt.params.clone()).map_err(|e| {
                Error::Incompatible(format!("checkpoint at epoch {} does not match the architecture: {e}", ckpt.epoch))
            })?;
            let width = if projection_dim > 0 { projection_dim } else { scope_len };
            let mut grads = Array2::<F>::zeros((dataset.len(), width));
            for i in 0..dataset.len() {
                let (x, y) = dataset.sample(i);
                let g = model.grad_loss_scoped(&x, y, scope)?;
                match &projection {
                    Some(p) => grads.row_mut(i).assign(&p.dot(&g)),
                    None => grads.row_mut(i).assign(&g),
                }
            }
            models.push(model);
            learning_rates.push(F::from_f64(ckpt.learning_rate));
            train_grads.push(grads);
        }

        Ok(TracinExplainer {
            models,
            learning_rates,
            scope,
            projection,
            projection_dim,
            train_grads,
        })
    }

    pub fn num_checkpoints(&self) -> usize {
        self.models.len()
    }
}

impl<F: Scalar> Explainer<F> for TracinExplainer<F> {
    fn name(&self) -> String {
        if self.projection_dim > 0 {
            format!("tracin_proj_{}", self.projection_dim)
        } else {
            "tracin".into()
        }
    }

    fn num_train(&self) -> usize {
        self.train_grads[0].nrows()
    }

    fn explain(&self, inputs: &Array2<F>, targets: &[usize]) -> Result<AttributionMatrix<F>> {
        check_batch(&self.models[0], inputs, targets)?;
        let n = self.num_train();
        let mut values = Array2::<F>::zeros((inputs.nrows(), n));
        for t in 0..inputs.nrows() {
            // checkpoint sum folded left in list order, so checkpoint-set
            // additivity holds to the last bit
            let mut row = Array1::<F>::zeros(n);
            for (c, model) in self.models.iter().enumerate() {
                let g = model.grad_loss_scoped(&inputs.row(t), targets[t], self.scope)?;
                let phi = match &self.projection {
                    Some(p) => p.dot(&g),
                    None => g,
                };
                let contrib = self.train_grads[c].dot(&phi);
                let eta = self.learning_rates[c];
                for i in 0..n {
                    row[i] = row[i] + eta * contrib[i];
                }
            }
            values.row_mut(t).assign(&row);
        }
        AttributionMatrix::new(values, targets.to_vec(), self.name(), (0..n).collect())
    }

    fn self_influence(&self) -> Result<Array1<F>> {
        let n = self.num_train();
        let mut out = Array1::<F>::zeros(n);
        for (c, grads) in self.train_grads.iter().enumerate() {
            let eta = self.learning_rates[c];
            for i in 0..n {
                let row = grads.row(i);
                out[i] = out[i] + eta * row.dot(&row);
            }
        }
        Ok(out)
    }
}
