//! Representer points: the final layer is refit with L2 regularization to a
//! stationary point, which lets the retrained layer be written exactly as a
//! feature-weighted combination of training samples. Attribution is then a
//! kernel evaluation scaled by the per-sample loss sensitivities.

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{minimize_risk, softmax, Model, ParamScope};
use crate::scalar::Scalar;

use super::{check_batch, AttributionMatrix, Explainer};

/// Outcome of the final-layer refit.
#[derive(Debug, Clone)]
pub struct RepresenterState<F> {
    /// Retrained final-layer weights, `p x C`.
    pub weight: Array2<F>,
    /// Retrained final-layer bias, `C`.
    pub bias: Array1<F>,
    /// Representer coefficients `α_i = −(1/(2·l2·n))·∂L/∂f(z_i)`, `n x C`.
    pub alphas: Array2<F>,
    /// Training features `h(z_i)`, `n x p`.
    pub features: Array2<F>,
    /// Training labels, in dataset order.
    pub labels: Vec<usize>,
    /// L2 strength the layer was refit with.
    pub l2: f64,
    /// Gradient norm at the returned parameters.
    pub grad_norm: f64,
    pub iterations: usize,
}

impl<F: Scalar> RepresenterState<F> {
    /// `Σ_i h(z_i) α_iᵀ`, which equals the retrained weights at a stationary
    /// point of the regularized objective.
    pub fn reconstructed_weight(&self) -> Array2<F> {
        self.features.t().dot(&self.alphas)
    }

    /// Relative Frobenius error of the representer reconstruction.
    pub fn reconstruction_error(&self) -> f64 {
        let diff = &self.reconstructed_weight() - &self.weight;
        let num = diff.iter().map(|&v| (v * v).as_f64()).sum::<f64>().sqrt();
        let den = self
            .weight
            .iter()
            .map(|&v| (v * v).as_f64())
            .sum::<f64>()
            .sqrt();
        num / den
    }

    /// Pre-activation output `(Wᵀh(z))_c` of the retrained layer.
    pub fn preactivation(&self, h: &Array1<F>, class: usize) -> F {
        self.weight.column(class).dot(h)
    }
}

/// Refits the final layer of `model` on `dataset` with the objective
/// `mean loss + l2·‖θ_last‖²` by full-batch gradient descent with
/// backtracking line search, down to gradient norm `tolerance`.
///
/// Errors with the final gradient norm if the iteration budget runs out.
pub fn representer_fit<F: Scalar>(
    model: &Model<F>,
    dataset: &Dataset<F>,
    l2: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<RepresenterState<F>> {
    if !(l2 > 0.0) {
        return Err(Error::config("representer l2 strength must be positive"));
    }
    if dataset.dim() != model.arch().input_dim {
        return Err(Error::ShapeMismatch {
            what: "representer dataset dimension",
            expected: model.arch().input_dim,
            actual: dataset.dim(),
        });
    }
    // minimize_risk uses the (λ/2)‖θ‖² convention; this objective carries
    // l2·‖θ‖², hence the factor of two
    let fit = minimize_risk(
        model,
        dataset,
        ParamScope::LastLayer,
        2.0 * l2,
        tolerance,
        max_iterations,
    )?;

    let arch = fit.model.arch().clone();
    let p = arch.feature_dim();
    let c = arch.num_classes;
    let range = arch.last_layer_range();
    let flat = fit.model.params().slice(ndarray::s![range]).to_owned();
    let weight = flat
        .slice(ndarray::s![..p * c])
        .to_owned()
        .into_shape_with_order((p, c))
        .expect("last layer weight shape");
    let bias = flat.slice(ndarray::s![p * c..]).to_owned();

    let n = dataset.len();
    let mut features = Array2::<F>::zeros((n, p));
    let mut alphas = Array2::<F>::zeros((n, c));
    let coef = F::from_f64(-1.0 / (2.0 * l2 * n as f64));
    for i in 0..n {
        let (x, y) = dataset.sample(i);
        let h = fit.model.features(&x)?;
        let logits = h.dot(&weight) + &bias;
        let mut delta = softmax(&logits);
        delta[y] = delta[y] - F::one();
        features.row_mut(i).assign(&h);
        alphas.row_mut(i).assign(&delta.mapv(|d| d * coef));
    }

    Ok(RepresenterState {
        weight,
        bias,
        alphas,
        features,
        labels: dataset.labels().to_vec(),
        l2,
        grad_norm: fit.grad_norm,
        iterations: fit.iterations,
    })
}

pub struct RepresenterExplainer<F> {
    model: Model<F>,
    state: RepresenterState<F>,
}

impl<F: Scalar> RepresenterExplainer<F> {
    pub fn new(model: Model<F>, state: RepresenterState<F>) -> Self {
        RepresenterExplainer { model, state }
    }

    pub fn state(&self) -> &RepresenterState<F> {
        &self.state
    }
}

impl<F: Scalar> Explainer<F> for RepresenterExplainer<F> {
    fn name(&self) -> String {
        "representer".into()
    }

    fn num_train(&self) -> usize {
        self.state.features.nrows()
    }

    fn explain(&self, inputs: &Array2<F>, targets: &[usize]) -> Result<AttributionMatrix<F>> {
        check_batch(&self.model, inputs, targets)?;
        let n = self.num_train();
        let mut values = Array2::<F>::zeros((inputs.nrows(), n));
        for t in 0..inputs.nrows() {
            let h = self.model.features(&inputs.row(t))?;
            let kernel = self.state.features.dot(&h);
            let c = targets[t];
            for i in 0..n {
                values[(t, i)] = self.state.alphas[(i, c)] * kernel[i];
            }
        }
        AttributionMatrix::new(values, targets.to_vec(), self.name(), (0..n).collect())
    }

    fn self_influence(&self) -> Result<Array1<F>> {
        Ok(Array1::from_iter((0..self.num_train()).map(|i| {
            let h = self.state.features.row(i);
            self.state.alphas[(i, self.state.labels[i])] * h.dot(&h)
        })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::nn::{init_params, Activation, ModelArch};

    fn fitted(n: usize, c: usize, l2: f64, tol: f64) -> (Model<f64>, RepresenterState<f64>, Dataset<f64>) {
        let (ds, _) = make_blobs::<f64>(n, 2, c, 3.0, 1, 31).unwrap();
        let arch = ModelArch {
            input_dim: 2,
            hidden_dims: vec![],
            num_classes: c,
            activation: Activation::Relu,
        };
        let model = Model::new(arch.clone(), init_params(&arch, 2)).unwrap();
        let state = representer_fit(&model, &ds, l2, tol, 500_000).unwrap();
        (model, state, ds)
    }

    #[test]
    fn fit_reaches_requested_gradient_norm() {
        let (_, state, _) = fitted(60, 3, 0.05, 1e-8);
        assert!(state.grad_norm <= 1e-8);
    }

    #[test]
    fn reconstruction_identity_holds() {
        let (_, state, _) = fitted(60, 3, 0.05, 1e-9);
        assert!(
            state.reconstruction_error() < 1e-4,
            "relative reconstruction error {}",
            state.reconstruction_error()
        );
    }

    #[test]
    fn single_training_point_gives_rank_one_weight() {
        // with n = 1, W = h(z_1) α_1ᵀ exactly at stationarity: every column
        // of W is proportional to h(z_1)
        let features = ndarray::array![[2.0, -1.0]];
        let ds = Dataset::new(features, vec![0], 2).unwrap();
        let arch = ModelArch {
            input_dim: 2,
            hidden_dims: vec![],
            num_classes: 2,
            activation: Activation::Relu,
        };
        let model = Model::new(arch.clone(), init_params(&arch, 4)).unwrap();
        let state = representer_fit(&model, &ds, 0.1, 1e-8, 500_000).unwrap();
        // proportionality: W[0][c] / h[0] == W[1][c] / h[1]
        for c in 0..2 {
            let r0: f64 = state.weight[(0, c)] / 2.0;
            let r1 = state.weight[(1, c)] / -1.0;
            assert!((r0 - r1).abs() < 1e-6, "column {c}: {r0} vs {r1}");
        }
    }

    #[test]
    fn decomposition_completeness_per_test_sample() {
        let (model, state, ds) = fitted(90, 3, 0.05, 1e-9);
        let explainer = RepresenterExplainer::new(model, state);
        let batch = ds.features().slice(ndarray::s![..10, ..]).to_owned();
        let targets: Vec<usize> = (0..10).map(|t| t % 3).collect();
        let m = explainer.explain(&batch, &targets).unwrap();
        for t in 0..10 {
            let row_sum: f64 = m.values.row(t).sum();
            let h = explainer.model.features(&batch.row(t)).unwrap();
            let expect = explainer.state.preactivation(&h, targets[t]);
            assert!(
                (row_sum - expect).abs() < 1e-6,
                "row {t}: Σ τ = {row_sum} vs Wᵀh = {expect}"
            );
        }
    }

    #[test]
    fn scaling_test_features_scales_rows_bilinearly() {
        let (model, state, ds) = fitted(40, 2, 0.05, 1e-8);
        let explainer = RepresenterExplainer::new(model, state);
        let x = ds.features().row(0).to_owned();
        let scaled = x.mapv(|v| 3.0 * v);
        let batch1 = ndarray::Array2::from_shape_vec((1, 2), x.to_vec()).unwrap();
        let batch3 = ndarray::Array2::from_shape_vec((1, 2), scaled.to_vec()).unwrap();
        let m1 = explainer.explain(&batch1, &[1]).unwrap();
        let m3 = explainer.explain(&batch3, &[1]).unwrap();
        for i in 0..m1.num_train() {
            assert!((m3.values[(0, i)] - 3.0 * m1.values[(0, i)]).abs() < 1e-10);
        }
    }

    #[test]
    fn orthogonal_test_point_gives_zero_row() {
        // all training features on the first axis, test point on the second
        let features = ndarray::array![[1.0, 0.0], [2.0, 0.0], [-1.5, 0.0]];
        let ds = Dataset::new(features, vec![0, 1, 0], 2).unwrap();
        let arch = ModelArch {
            input_dim: 2,
            hidden_dims: vec![],
            num_classes: 2,
            activation: Activation::Relu,
        };
        let model = Model::new(arch.clone(), init_params(&arch, 4)).unwrap();
        let state = representer_fit(&model, &ds, 0.1, 1e-9, 500_000).unwrap();
        let explainer = RepresenterExplainer::new(model, state);
        let m = explainer
            .explain(&ndarray::array![[0.0, 5.0]], &[0])
            .unwrap();
        for i in 0..3 {
            assert_eq!(m.values[(0, i)], 0.0);
        }
    }

    #[test]
    fn self_influence_matches_explain_diagonal() {
        let (model, state, ds) = fitted(30, 2, 0.05, 1e-8);
        let explainer = RepresenterExplainer::new(model, state);
        let si = explainer.self_influence().unwrap();
        let m = explainer.explain(ds.features(), ds.labels()).unwrap();
        for i in 0..ds.len() {
            assert!((si[i] - m.values[(i, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn exhausted_iterations_error_names_final_grad_norm() {
        let (ds, _) = make_blobs::<f64>(30, 2, 2, 3.0, 1, 31).unwrap();
        let arch = ModelArch {
            input_dim: 2,
            hidden_dims: vec![],
            num_classes: 2,
            activation: Activation::Relu,
        };
        let model = Model::new(arch.clone(), init_params(&arch, 2)).unwrap();
        match representer_fit(&model, &ds, 0.05, 1e-12, 2) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("gradient norm")),
            other => panic!("expected convergence error, got {:?}", other.map(|_| ())),
        }
    }
}
