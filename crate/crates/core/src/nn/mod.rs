//! Tiny differentiable classifiers with analytic gradients and an exact
//! empirical-risk Hessian.
//!
//! A model is a flat parameter vector interpreted against a [`ModelArch`]:
//! zero or more hidden affine+activation layers (the feature map `h`)
//! followed by a final affine layer producing logits. Gradients are computed
//! by hand-written backpropagation; the Hessian is obtained by running the
//! same backpropagation over [`Dual`] scalars, which differentiates the
//! analytic gradient exactly, one parameter direction at a time.

mod opt;
mod train;

pub use opt::{minimize_risk, newton_fit, FitOutcome};
pub use train::{
    init_params, randomize_parameters, train, EpochStats, RandomizeScope, TrainConfig, TrainResult,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Relu => z.max(F::zero()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output<F: Scalar>(self, a: F) -> F {
        match self {
            Activation::Relu => {
                if a > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Tanh => F::one() - a * a,
        }
    }
}

/// Architecture descriptor. An empty `hidden_dims` gives a linear classifier
/// whose feature map is the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden dims must be positive"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.num_classes));
        dims
    }

    /// Exact flat parameter count: `Σ (fan_in+1)·fan_out` over layers.
    pub fn parameter_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(fi, fo)| (fi + 1) * fo)
            .sum()
    }

    /// Dimension of the penultimate feature map `h`.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// Flat range of the final affine layer (weights then bias).
    pub fn last_layer_range(&self) -> std::ops::Range<usize> {
        let total = self.parameter_count();
        let p = self.feature_dim();
        total - (p + 1) * self.num_classes..total
    }
}

/// Which slice of the parameter vector an operation works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScope {
    All,
    LastLayer,
}

impl ParamScope {
    pub fn range(self, arch: &ModelArch) -> std::ops::Range<usize> {
        match self {
            ParamScope::All => 0..arch.parameter_count(),
            ParamScope::LastLayer => arch.last_layer_range(),
        }
    }
}

/// Default cap on the dense Hessian scope.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// A classifier: architecture plus flat parameters, layer order input to
/// output, each layer laid out as row-major weights then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    arch: ModelArch,
    params: Array1<F>,
}

impl<F: Scalar> Model<F> {
    pub fn new(arch: ModelArch, params: Array1<F>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.parameter_count() {
            return Err(Error::ShapeMismatch {
                what: "model parameters",
                expected: arch.parameter_count(),
                actual: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("model parameters must be finite"));
        }
        Ok(Model { arch, params })
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn params(&self) -> &Array1<F> {
        &self.params
    }

    pub fn into_params(self) -> Array1<F> {
        self.params
    }

    pub fn with_params(&self, params: Array1<F>) -> Result<Self> {
        Model::new(self.arch.clone(), params)
    }

    /// Converts the parameter payload to another scalar type.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            arch: self.arch.clone(),
            params: self.params.mapv(|v| G::from_f64(v.as_f64())),
        }
    }

    /// Unpacks the flat parameter vector into per-layer `(weights, bias)`
    /// pairs, input to output. The inverse of [`Model::pack`].
    pub fn unpack(&self) -> Vec<(Array2<F>, Array1<F>)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (fi, fo) in self.arch.layer_dims() {
            let (w, b) = self.layer(offset, fi, fo);
            out.push((w.to_owned(), b.to_owned()));
            offset += (fi + 1) * fo;
        }
        out
    }

    /// Packs per-layer `(weights, bias)` pairs back into a model.
    pub fn pack(arch: ModelArch, layers: &[(Array2<F>, Array1<F>)]) -> Result<Self> {
        let dims = arch.layer_dims();
        if layers.len() != dims.len() {
            return Err(Error::ShapeMismatch {
                what: "layer count",
                expected: dims.len(),
                actual: layers.len(),
            });
        }
        let mut params = Vec::with_capacity(arch.parameter_count());
        for ((w, b), (fi, fo)) in layers.iter().zip(dims) {
            if w.dim() != (fi, fo) || b.len() != fo {
                return Err(Error::ShapeMismatch {
                    what: "layer shape",
                    expected: (fi + 1) * fo,
                    actual: w.len() + b.len(),
                });
            }
            params.extend(w.iter().copied());
            params.extend(b.iter().copied());
        }
        Model::new(arch, Array1::from(params))
    }

    fn layer<'a>(&'a self, offset: usize, fan_in: usize, fan_out: usize) -> (ArrayView2<'a, F>, ArrayView1<'a, F>) {
        let w = self
            .params
            .slice(ndarray::s![offset..offset + fan_in * fan_out])
            .into_shape_with_order((fan_in, fan_out))
            .expect("layer slice matches fan_in x fan_out");
        let b = self
            .params
            .slice(ndarray::s![offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out]);
        (w, b)
    }

    fn check_input(&self, x: &ArrayView1<F>) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::ShapeMismatch {
                what: "model input",
                expected: self.arch.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.arch.num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: self.arch.num_classes,
            });
        }
        Ok(())
    }

    /// Forward pass retaining every post-activation; the last entry of
    /// `hidden` is the feature vector `h(x)`.
    fn forward_trace(&self, x: &ArrayView1<F>) -> (Vec<Array1<F>>, Array1<F>) {
        let dims = self.arch.layer_dims();
        let mut hidden: Vec<Array1<F>> = Vec::with_capacity(dims.len().saturating_sub(1));
        let mut offset = 0;
        let mut current = x.to_owned();
        for (l, &(fi, fo)) in dims.iter().enumerate() {
            let (w, b) = self.layer(offset, fi, fo);
            let z = current.dot(&w) + &b;
            offset += (fi + 1) * fo;
            if l + 1 == dims.len() {
                return (hidden, z);
            }
            current = z.mapv(|v| self.arch.activation.apply(v));
            hidden.push(current.clone());
        }
        unreachable!("layer_dims is never empty")
    }

    /// Penultimate feature map `h(x)`; the identity for a linear model.
    pub fn features(&self, x: &ArrayView1<F>) -> Result<Array1<F>> {
        self.check_input(x)?;
        let (hidden, _) = self.forward_trace(x);
        Ok(hidden.last().cloned().unwrap_or_else(|| x.to_owned()))
    }

    /// Logits `Wᵀh(x) + b`.
    pub fn forward(&self, x: &ArrayView1<F>) -> Result<Array1<F>> {
        self.check_input(x)?;
        let (_, logits) = self.forward_trace(x);
        Ok(logits)
    }

    /// Class with the largest logit (ties to the lower index).
    pub fn predict(&self, x: &ArrayView1<F>) -> Result<usize> {
        let logits = self.forward(x)?;
        let mut best = 0;
        for j in 1..logits.len() {
            if logits[j] > logits[best] {
                best = j;
            }
        }
        Ok(best)
    }

    /// Cross-entropy loss, log-sum-exp stabilized.
    pub fn loss(&self, x: &ArrayView1<F>, y: usize) -> Result<F> {
        self.check_label(y)?;
        let logits = self.forward(x)?;
        Ok(log_sum_exp(&logits) - logits[y])
    }

    /// Backpropagates an arbitrary logit-space gradient to the full flat
    /// parameter gradient. This single kernel serves the loss gradient, the
    /// TRAK logit transform, and (over [`Dual`]) the Hessian.
    fn grad_from_logit_grad(&self, x: &ArrayView1<F>, dlogits: &Array1<F>) -> Array1<F> {
        let dims = self.arch.layer_dims();
        let (hidden, _) = self.forward_trace(x);
        let mut grad = Array1::<F>::zeros(self.params.len());

        // offsets of each layer in the flat vector
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &(fi, fo) in &dims {
            offsets.push(acc);
            acc += (fi + 1) * fo;
        }

        let x_owned = x.to_owned();
        let mut delta = dlogits.clone();
        for l in (0..dims.len()).rev() {
            let (fi, fo) = dims[l];
            let input: &Array1<F> = if l == 0 { &x_owned } else { &hidden[l - 1] };
            let base = offsets[l];
            for i in 0..fi {
                for j in 0..fo {
                    grad[base + i * fo + j] = input[i] * delta[j];
                }
            }
            for j in 0..fo {
                grad[base + fi * fo + j] = delta[j];
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(base, fi, fo);
            let upstream = w.dot(&delta);
            let a = &hidden[l - 1];
            delta = Array1::from_iter(
                upstream
                    .iter()
                    .zip(a.iter())
                    .map(|(&u, &av)| u * self.arch.activation.derivative_from_output(av)),
            );
        }
        grad
    }

    /// Analytic gradient of the cross-entropy loss with respect to all
    /// parameters: backpropagation from `softmax(f) − onehot(y)`.
    pub fn grad_loss(&self, x: &ArrayView1<F>, y: usize) -> Result<Array1<F>> {
        self.check_input(x)?;
        self.check_label(y)?;
        let logits = self.forward_trace(x).1;
        let mut dlogits = softmax(&logits);
        dlogits[y] = dlogits[y] - F::one();
        Ok(self.grad_from_logit_grad(x, &dlogits))
    }

    /// Loss gradient restricted to a parameter scope.
    pub fn grad_loss_scoped(&self, x: &ArrayView1<F>, y: usize, scope: ParamScope) -> Result<Array1<F>> {
        let full = self.grad_loss(x, y)?;
        let range = scope.range(&self.arch);
        Ok(full.slice(ndarray::s![range]).to_owned())
    }

    /// Gradient of `r(x) = log(p / (1 − p))` with `p` the softmax probability
    /// of `target`, clamped away from 0 and 1.
    pub fn grad_logit_transform(&self, x: &ArrayView1<F>, target: usize) -> Result<(Array1<F>, F)> {
        self.check_input(x)?;
        self.check_label(target)?;
        let logits = self.forward_trace(x).1;
        let p_all = softmax(&logits);
        let p = clamp_probability(p_all[target]);
        // dr/df_k = (1[k = target] − p_k) / (1 − p)
        let scale = F::one() / (F::one() - p);
        let mut dlogits = p_all.mapv(|pk| -pk * scale);
        dlogits[target] = dlogits[target] + scale;
        Ok((self.grad_from_logit_grad(x, &dlogits), p))
    }

    /// Softmax probability of `target`, clamped like the logit transform.
    pub fn probability(&self, x: &ArrayView1<F>, target: usize) -> Result<F> {
        self.check_input(x)?;
        self.check_label(target)?;
        let logits = self.forward_trace(x).1;
        Ok(clamp_probability(softmax(&logits)[target]))
    }

    /// Exact damped Hessian of the empirical risk `J(θ, D) = mean loss`,
    /// restricted to `scope`: `∇²J + damping·I`, symmetrized after assembly.
    ///
    /// Columns are Hessian-vector products computed by seeding one scope
    /// direction of a [`Dual`]-typed copy of the model and reading the
    /// tangent of the analytic gradient — exact, no finite differencing.
    pub fn hessian_risk(
        &self,
        dataset: &crate::data::Dataset<F>,
        damping: F,
        scope: ParamScope,
    ) -> Result<Array2<F>> {
        self.hessian_risk_capped(dataset, damping, scope, DEFAULT_DENSE_CAP)
    }

    pub fn hessian_risk_capped(
        &self,
        dataset: &crate::data::Dataset<F>,
        damping: F,
        scope: ParamScope,
        cap: usize,
    ) -> Result<Array2<F>> {
        if dataset.dim() != self.arch.input_dim {
            return Err(Error::ShapeMismatch {
                what: "dataset feature dimension",
                expected: self.arch.input_dim,
                actual: dataset.dim(),
            });
        }
        if damping < F::zero() {
            return Err(Error::config("hessian damping must be non-negative"));
        }
        let range = scope.range(&self.arch);
        let m = range.len();
        if m > cap {
            return Err(Error::Capacity { size: m, cap });
        }

        let mut dual: Model<Dual> = self.cast();
        let rows: Vec<(Array1<Dual>, usize)> = (0..dataset.len())
            .map(|i| {
                let (x, y) = dataset.sample(i);
                (x.mapv(|v| Dual::constant(v.as_f64())), y)
            })
            .collect();
        let n = Dual::constant(rows.len() as f64);

        let mut h = Array2::<f64>::zeros((m, m));
        for (col, k) in range.clone().enumerate() {
            dual.params[k].eps = 1.0;
            let mut acc = Array1::<Dual>::zeros(m);
            for (x, y) in &rows {
                let g = dual.grad_loss(&x.view(), *y)?;
                for (dst, s) in range.clone().enumerate() {
                    acc[dst] = acc[dst] + g[s];
                }
            }
            for dst in 0..m {
                h[(dst, col)] = (acc[dst] / n).eps;
            }
            dual.params[k].eps = 0.0;
        }

        let mut out = Array2::<F>::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                let sym = 0.5 * (h[(i, j)] + h[(j, i)]);
                out[(i, j)] = F::from_f64(sym);
            }
            out[(i, i)] = out[(i, i)] + damping;
        }
        Ok(out)
    }
}

pub fn log_sum_exp<F: Scalar>(logits: &Array1<F>) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let sum = logits.iter().map(|&z| (z - max).exp()).sum::<F>();
    max + sum.ln()
}

pub fn softmax<F: Scalar>(logits: &Array1<F>) -> Array1<F> {
    let lse = log_sum_exp(logits);
    logits.mapv(|z| (z - lse).exp())
}

fn clamp_probability<F: Scalar>(p: F) -> F {
    let lo = F::from_f64(1e-12);
    let hi = F::one() - lo;
    p.max(lo).min(hi)
}

/// Parameter snapshot with the learning rate in effect at that epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub epoch: usize,
    pub learning_rate: f64,
    pub params: Array1<F>,
}

// ---------------------------------------------------------------------------
// JSON wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelWire {
    arch: ModelArch,
    params: Vec<f64>,
}

impl<F: Scalar> Model<F> {
    pub fn to_json(&self) -> Result<String> {
        let wire = ModelWire {
            arch: self.arch.clone(),
            params: self.params.iter().map(|v| v.as_f64()).collect(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: ModelWire = serde_json::from_str(text)?;
        Model::new(
            wire.arch,
            Array1::from_iter(wire.params.into_iter().map(F::from_f64)),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointWire {
    epoch: usize,
    learning_rate: f64,
    params: Vec<f64>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn to_json(&self) -> Result<String> {
        let wire = CheckpointWire {
            epoch: self.epoch,
            learning_rate: self.learning_rate,
            params: self.params.iter().map(|v| v.as_f64()).collect(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: CheckpointWire = serde_json::from_str(text)?;
        Ok(Checkpoint {
            epoch: wire.epoch,
            learning_rate: wire.learning_rate,
            params: Array1::from_iter(wire.params.into_iter().map(F::from_f64)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn linear_arch(d: usize, c: usize) -> ModelArch {
        ModelArch {
            input_dim: d,
            hidden_dims: vec![],
            num_classes: c,
            activation: Activation::Relu,
        }
    }

    fn model_from(arch: ModelArch, params: Vec<f64>) -> Model<f64> {
        Model::new(arch, Array1::from(params)).unwrap()
    }

    #[test]
    fn parameter_count_matches_layout() {
        let arch = ModelArch {
            input_dim: 3,
            hidden_dims: vec![5, 4],
            num_classes: 2,
            activation: Activation::Tanh,
        };
        assert_eq!(arch.parameter_count(), 4 * 5 + 6 * 4 + 5 * 2);
        assert_eq!(arch.feature_dim(), 4);
        assert_eq!(arch.last_layer_range(), 44..54);
    }

    #[test]
    fn features_identity_for_linear_model() {
        let m = model_from(linear_arch(2, 2), vec![0.0; 6]);
        let x = array![1.0, 2.0];
        assert_eq!(m.features(&x.view()).unwrap(), x);
    }

    #[test]
    fn features_zero_weights_give_zero_vector() {
        let arch = ModelArch {
            input_dim: 3,
            hidden_dims: vec![4],
            num_classes: 2,
            activation: Activation::Relu,
        };
        let m = model_from(arch.clone(), vec![0.0; arch.parameter_count()]);
        let x = array![0.3, -1.0, 2.0];
        assert_eq!(m.features(&x.view()).unwrap(), Array1::<f64>::zeros(4));
    }

    #[test]
    fn features_match_hand_evaluated_tanh() {
        // one 2x2 tanh layer: W = [[0.5, -1.0], [0.25, 2.0]], b = [0.1, -0.2]
        let arch = ModelArch {
            input_dim: 2,
            hidden_dims: vec![2],
            num_classes: 2,
            activation: Activation::Tanh,
        };
        let mut params = vec![0.0; arch.parameter_count()];
        params[..6].copy_from_slice(&[0.5, -1.0, 0.25, 2.0, 0.1, -0.2]);
        let m = model_from(arch, params);
        let h = m.features(&array![1.0, 0.0].view()).unwrap();
        // z = x·W + b = [0.5 + 0.1, -1.0 - 0.2]
        assert!((h[0] - 0.6f64.tanh()).abs() < 1e-15);
        assert!((h[1] - (-1.2f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn forward_zero_weights_return_bias() {
        let m = model_from(linear_arch(3, 2), vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, -0.1]);
        for x in [array![1.0, 2.0, 3.0], array![-5.0, 0.0, 9.0]] {
            assert_eq!(m.forward(&x.view()).unwrap(), array![0.1, -0.1]);
        }
    }

    #[test]
    fn forward_identity_weights() {
        // W = I (2x2 row-major), b = 0
        let m = model_from(linear_arch(2, 2), vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.forward(&array![3.0, -1.0].view()).unwrap(), array![3.0, -1.0]);
    }

    #[test]
    fn forward_mlp_composes_features_and_affine() {
        let arch = ModelArch {
            input_dim: 2,
            hidden_dims: vec![3],
            num_classes: 2,
            activation: Activation::Tanh,
        };
        let params: Vec<f64> = (0..arch.parameter_count()).map(|i| 0.05 * i as f64 - 0.2).collect();
        let m = model_from(arch.clone(), params);
        let x = array![0.7, -1.3];
        let h = m.features(&x.view()).unwrap();
        // apply the last layer by hand
        let range = arch.last_layer_range();
        let w = m.params().slice(ndarray::s![range.start..range.start + 6]);
        let b = m.params().slice(ndarray::s![range.start + 6..range.end]);
        let mut expect = array![b[0], b[1]];
        for i in 0..3 {
            for j in 0..2 {
                expect[j] += h[i] * w[i * 2 + j];
            }
        }
        let logits = m.forward(&x.view()).unwrap();
        assert!((logits[0] - expect[0]).abs() < 1e-14);
        assert!((logits[1] - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn loss_uniform_logits_is_log_c() {
        let m = model_from(linear_arch(2, 4), vec![0.0; 12]);
        let loss = m.loss(&array![1.0, 1.0].view(), 2).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_saturated_correct_class_is_tiny() {
        // logits [30, -30] via bias, label 0
        let m = model_from(linear_arch(2, 2), vec![0.0, 0.0, 0.0, 0.0, 30.0, -30.0]);
        let loss = m.loss(&array![0.0, 0.0].view(), 0).unwrap();
        assert!(loss < 1e-12);
        assert!(loss >= 0.0);
    }

    #[test]
    fn loss_matches_hand_log_sum_exp() {
        // logits [1, 0], label = second class: -log(e^0 / (e^1 + e^0))
        let m = model_from(linear_arch(2, 2), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let loss = m.loss(&array![0.0, 0.0].view(), 1).unwrap();
        let expect = (1.0f64.exp() + 1.0).ln();
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 1.313_261_687_5).abs() < 1e-9);
    }

    #[test]
    fn loss_rejects_bad_label() {
        let m = model_from(linear_arch(2, 2), vec![0.0; 6]);
        assert!(matches!(
            m.loss(&array![0.0, 0.0].view(), 2),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn loss_is_shift_invariant() {
        let m = model_from(linear_arch(2, 3), vec![0.4, -0.3, 0.2, 0.9, -1.0, 0.1, 0.5, 0.0, -0.7]);
        let x = array![1.3, -0.4];
        let base = m.loss(&x.view(), 1).unwrap();
        // shifting every logit by c: add c to all biases
        let mut params = m.params().to_vec();
        for b in params.iter_mut().skip(6) {
            *b += 123.456;
        }
        let shifted = Model::new(m.arch().clone(), Array1::from(params)).unwrap();
        assert!((shifted.loss(&x.view(), 1).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn grad_vanishes_at_saturated_minimum() {
        // separable toy: huge margin on the correct class for both samples
        let m = model_from(linear_arch(1, 2), vec![60.0, -60.0, 0.0, 0.0]);
        let g0 = m.grad_loss(&array![1.0].view(), 0).unwrap();
        let g1 = m.grad_loss(&array![-1.0].view(), 1).unwrap();
        let norm = |g: &Array1<f64>| g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm(&g0) < 1e-6);
        assert!(norm(&g1) < 1e-6);
    }

    #[test]
    fn grad_linear_model_matches_closed_form() {
        let m = model_from(linear_arch(2, 3), vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4, 0.0, 0.2, -0.1]);
        let x = array![1.5, -2.0];
        let y = 2;
        let g = m.grad_loss(&x.view(), y).unwrap();
        let p = softmax(&m.forward(&x.view()).unwrap());
        for i in 0..2 {
            for j in 0..3 {
                let delta = p[j] - if j == y { 1.0 } else { 0.0 };
                assert!((g[i * 3 + j] - x[i] * delta).abs() < 1e-14);
            }
        }
        for j in 0..3 {
            let delta = p[j] - if j == y { 1.0 } else { 0.0 };
            assert!((g[6 + j] - delta).abs() < 1e-14);
        }
    }

    #[test]
    fn hessian_damping_adds_exactly_lambda_i() {
        let (ds, _) = crate::data::make_blobs::<f64>(12, 2, 2, 4.0, 1, 3).unwrap();
        let arch = linear_arch(2, 2);
        let params: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
        let m = model_from(arch, params);
        let h0 = m.hessian_risk(&ds, 0.0, ParamScope::All).unwrap();
        let h1 = m.hessian_risk(&ds, 2.5, ParamScope::All).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expect = h0[(i, j)] + if i == j { 2.5 } else { 0.0 };
                assert_eq!(h1[(i, j)], expect);
            }
        }
    }

    #[test]
    fn hessian_linear_softmax_matches_kronecker_oracle() {
        // closed form: (1/n) Σ x̃x̃ᵀ ⊗ (diag(p) − ppᵀ), indexed (i·C+j, k·C+l)
        let (ds, _) = crate::data::make_blobs::<f64>(10, 2, 3, 4.0, 1, 7).unwrap();
        let arch = linear_arch(2, 3);
        let params: Vec<f64> = (0..9).map(|i| 0.07 * i as f64 - 0.3).collect();
        let m = model_from(arch, params);
        let h = m.hessian_risk(&ds, 0.0, ParamScope::All).unwrap();

        let dim = 3 * 3; // (d+1)·C
        let mut oracle = Array2::<f64>::zeros((dim, dim));
        for s in 0..ds.len() {
            let (x, _) = ds.sample(s);
            let p = softmax(&m.forward(&x).unwrap());
            let xt = [x[0], x[1], 1.0];
            for i in 0..3 {
                for k in 0..3 {
                    for j in 0..3 {
                        for l in 0..3 {
                            let s_jl = if j == l { p[j] } else { 0.0 } - p[j] * p[l];
                            oracle[(i * 3 + j, k * 3 + l)] += xt[i] * xt[k] * s_jl;
                        }
                    }
                }
            }
        }
        oracle /= ds.len() as f64;
        for i in 0..dim {
            for j in 0..dim {
                assert!(
                    (h[(i, j)] - oracle[(i, j)]).abs() < 1e-10,
                    "H[{i},{j}] = {} vs oracle {}",
                    h[(i, j)],
                    oracle[(i, j)]
                );
            }
        }
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        let (ds, _) = crate::data::make_blobs::<f64>(8, 3, 2, 4.0, 1, 1).unwrap();
        let arch = ModelArch {
            input_dim: 3,
            hidden_dims: vec![4],
            num_classes: 2,
            activation: Activation::Tanh,
        };
        let params: Vec<f64> = (0..arch.parameter_count())
            .map(|i| (0.13 * i as f64).sin() * 0.5)
            .collect();
        let m = model_from(arch, params);
        let h = m.hessian_risk(&ds, 1e-3, ParamScope::All).unwrap();
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                assert_eq!(h[(i, j)], h[(j, i)]);
            }
        }
    }

    #[test]
    fn hessian_respects_capacity_cap() {
        let (ds, _) = crate::data::make_blobs::<f64>(8, 2, 2, 4.0, 1, 1).unwrap();
        let m = model_from(linear_arch(2, 2), vec![0.0; 6]);
        assert!(matches!(
            m.hessian_risk_capped(&ds, 0.0, ParamScope::All, 4),
            Err(Error::Capacity { size: 6, cap: 4 })
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let arch = ModelArch {
            input_dim: 2,
            hidden_dims: vec![3],
            num_classes: 2,
            activation: Activation::Relu,
        };
        let params: Vec<f64> = (0..arch.parameter_count()).map(|i| i as f64 * 0.25).collect();
        let m = model_from(arch, params);
        let text = m.to_json().unwrap();
        let back = Model::<f64>::from_json(&text).unwrap();
        assert_eq!(m, back);
    }
}
