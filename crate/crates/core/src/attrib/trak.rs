//! TRAK, single-model variant: kernel regression in the space of
//! model-output gradients. Multiclass handling goes through the logit
//! transform `r(z) = log(p/(1−p))` of the target-class probability, and the
//! training-side columns are reweighted by `1 − p_i`.

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::nn::Model;
use crate::scalar::Scalar;

use super::{check_batch, gaussian_projection, AttributionMatrix, Explainer};

/// Fixed Gram damping, added before inversion.
pub const GRAM_DAMPING: f64 = 1e-8;

/// How the regularized least-squares solve is carried out. The two forms
/// compute the same operator — `X(XᵀX+δI)⁻¹φ = (XXᵀ+δI)⁻¹Xφ` — so the
/// factorization happens in whichever space is smaller.
enum SolveForm {
    /// Cholesky factor of the feature Gram `XᵀX + δI` (m x m), for m <= n.
    Feature,
    /// Cholesky factor of the kernel Gram `XXᵀ + δI` (n x n), for m > n.
    Kernel,
}

pub struct TrakExplainer<F> {
    model: Model<F>,
    projection: Option<Array2<F>>,
    projection_dim: usize,
    /// n x m rows of (projected) gradients ∇r(z_i).
    train_grads: Array2<F>,
    gram_factor: Array2<F>,
    form: SolveForm,
    /// `1 − p_i` with `p_i` the probability of the ground-truth label.
    q: Array1<F>,
}

impl<F: Scalar> TrakExplainer<F> {
    pub fn new(
        model: Model<F>,
        dataset: &Dataset<F>,
        projection_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let full_dim = model.arch().parameter_count();
        if projection_dim > full_dim {
            return Err(Error::config(format!(
                "trak projection dimension {projection_dim} exceeds the parameter count {full_dim}"
            )));
        }
        let projection = if projection_dim > 0 {
            Some(gaussian_projection::<F>(projection_dim, full_dim, seed))
        } else {
            None
        };
        let m = if projection_dim > 0 { projection_dim } else { full_dim };

        let n = dataset.len();
        let mut train_grads = Array2::<F>::zeros((n, m));
        let mut q = Array1::<F>::zeros(n);
        for i in 0..n {
            let (x, y) = dataset.sample(i);
            let (g, p) = model.grad_logit_transform(&x, y)?;
            match &projection {
                Some(pmat) => train_grads.row_mut(i).assign(&pmat.dot(&g)),
                None => train_grads.row_mut(i).assign(&g),
            }
            q[i] = F::one() - p;
        }

        let form = if m <= n {
            SolveForm::Feature
        } else {
            SolveForm::Kernel
        };
        let mut gram = match form {
            SolveForm::Feature => train_grads.t().dot(&train_grads),
            SolveForm::Kernel => train_grads.dot(&train_grads.t()),
        };
        let delta = F::from_f64(GRAM_DAMPING);
        for k in 0..gram.nrows() {
            gram[(k, k)] = gram[(k, k)] + delta;
        }
        let gram_factor = cholesky(&gram).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!(
                "trak gradient Gram is singular even after damping ({msg})"
            )),
            other => other,
        })?;

        Ok(TrakExplainer {
            model,
            projection,
            projection_dim,
            train_grads,
            gram_factor,
            form,
            q,
        })
    }

    fn score_row(&self, x: &ndarray::ArrayView1<F>, target: usize) -> Result<Array1<F>> {
        let (g, _) = self.model.grad_logit_transform(x, target)?;
        let phi = match &self.projection {
            Some(p) => p.dot(&g),
            None => g,
        };
        let raw = match self.form {
            SolveForm::Feature => {
                let w = cholesky_solve(&self.gram_factor, &phi);
                self.train_grads.dot(&w)
            }
            SolveForm::Kernel => {
                let xphi = self.train_grads.dot(&phi);
                cholesky_solve(&self.gram_factor, &xphi)
            }
        };
        Ok(Array1::from_iter(
            raw.iter().zip(self.q.iter()).map(|(&s, &qi)| s * qi),
        ))
    }
}

impl<F: Scalar> Explainer<F> for TrakExplainer<F> {
    fn name(&self) -> String {
        if self.projection_dim > 0 {
            format!("trak_proj_{}", self.projection_dim)
        } else {
            "trak".into()
        }
    }

    fn num_train(&self) -> usize {
        self.train_grads.nrows()
    }

    fn explain(&self, inputs: &Array2<F>, targets: &[usize]) -> Result<AttributionMatrix<F>> {
        check_batch(&self.model, inputs, targets)?;
        let mut values = Array2::<F>::zeros((inputs.nrows(), self.num_train()));
        for t in 0..inputs.nrows() {
            let row = self.score_row(&inputs.row(t), targets[t])?;
            values.row_mut(t).assign(&row);
        }
        AttributionMatrix::new(
            values,
            targets.to_vec(),
            self.name(),
            (0..self.num_train()).collect(),
        )
    }

    fn self_influence(&self) -> Result<Array1<F>> {
        // diagonal of explain(train set), one solve per training sample
        let mut out = Array1::<F>::zeros(self.num_train());
        for i in 0..self.num_train() {
            let row = self.train_grads.row(i).to_owned();
            match self.form {
                SolveForm::Feature => {
                    let w = cholesky_solve(&self.gram_factor, &row);
                    out[i] = self.train_grads.row(i).dot(&w) * self.q[i];
                }
                SolveForm::Kernel => {
                    let k_col = self.train_grads.dot(&row);
                    let s = cholesky_solve(&self.gram_factor, &k_col);
                    out[i] = s[i] * self.q[i];
                }
            }
        }
        Ok(out)
    }
}
