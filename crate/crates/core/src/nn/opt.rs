//! Full-batch minimizers for models that must actually sit at a stationary
//! point: the representer-point refit of the final layer and the convex
//! reference trainings behind the leave-one-out comparisons.

use ndarray::Array1;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::scalar::Scalar;

use super::{Model, ParamScope};

#[derive(Debug, Clone)]
pub struct FitOutcome<F> {
    pub model: Model<F>,
    pub grad_norm: f64,
    pub iterations: usize,
}

const ARMIJO_C: f64 = 1e-4;

struct Problem<'a, F> {
    dataset: &'a Dataset<F>,
    range: std::ops::Range<usize>,
    scope: ParamScope,
    l2: f64,
}

impl<F: Scalar> Problem<'_, F> {
    fn objective(&self, m: &Model<F>) -> Result<F> {
        let mut total = F::zero();
        for i in 0..self.dataset.len() {
            let (x, y) = self.dataset.sample(i);
            total = total + m.loss(&x, y)?;
        }
        let mut reg = F::zero();
        for k in self.range.clone() {
            let v = m.params()[k];
            reg = reg + v * v;
        }
        Ok(total / F::from_f64(self.dataset.len() as f64) + F::from_f64(self.l2 / 2.0) * reg)
    }

    fn gradient(&self, m: &Model<F>) -> Result<Array1<F>> {
        let mut g = Array1::<F>::zeros(self.range.len());
        for i in 0..self.dataset.len() {
            let (x, y) = self.dataset.sample(i);
            g = g + m.grad_loss_scoped(&x, y, self.scope)?;
        }
        let n_inv = F::from_f64(1.0 / self.dataset.len() as f64);
        let l2 = F::from_f64(self.l2);
        for (dst, k) in self.range.clone().enumerate() {
            g[dst] = g[dst] * n_inv + l2 * m.params()[k];
        }
        Ok(g)
    }

    fn step(&self, m: &Model<F>, direction: &Array1<F>, scale: f64) -> Model<F> {
        let mut params = m.params().clone();
        let s = F::from_f64(scale);
        for (dst, k) in self.range.clone().enumerate() {
            params[k] = params[k] - s * direction[dst];
        }
        Model {
            arch: m.arch().clone(),
            params,
        }
    }
}

/// Minimizes `mean loss + (l2/2)·‖θ_scope‖²` over the scoped parameters by
/// gradient descent with a backtracking (halving) line search under the
/// Armijo condition, until the scoped gradient norm drops to `tol`. The
/// trial step is seeded with a Barzilai-Borwein estimate, which keeps the
/// descent usable on badly conditioned problems.
///
/// Errors with the final gradient norm if `max_iters` steps do not reach the
/// tolerance.
pub fn minimize_risk<F: Scalar>(
    model: &Model<F>,
    dataset: &Dataset<F>,
    scope: ParamScope,
    l2: f64,
    tol: f64,
    max_iters: usize,
) -> Result<FitOutcome<F>> {
    if l2 < 0.0 {
        return Err(Error::config("l2 strength must be non-negative"));
    }
    let problem = Problem {
        dataset,
        range: scope.range(model.arch()),
        scope,
        l2,
    };

    let mut current = model.clone();
    let mut f_cur = problem.objective(&current)?.as_f64();
    let mut g = problem.gradient(&current)?;
    let mut step = 1.0f64;
    let mut prev: Option<(Array1<F>, Array1<F>)> = None; // (params slice, gradient)

    for iter in 0..max_iters {
        let g_sq = g.iter().map(|&v| (v * v).as_f64()).sum::<f64>();
        let g_norm = g_sq.sqrt();
        if g_norm <= tol {
            return Ok(FitOutcome {
                model: current,
                grad_norm: g_norm,
                iterations: iter,
            });
        }

        // BB1 trial step from the last (Δθ, Δg) pair
        let mut trial = step * 2.0;
        if let Some((old_params, old_grad)) = &prev {
            let mut s_dot_s = 0.0;
            let mut s_dot_y = 0.0;
            for (dst, k) in problem.range.clone().enumerate() {
                let s = (current.params()[k] - old_params[dst]).as_f64();
                let y = (g[dst] - old_grad[dst]).as_f64();
                s_dot_s += s * s;
                s_dot_y += s * y;
            }
            if s_dot_y > 0.0 && s_dot_s > 0.0 {
                let bb = s_dot_s / s_dot_y;
                if bb.is_finite() && bb > 0.0 {
                    trial = bb;
                }
            }
        }
        trial = trial.clamp(1e-16, 1e8);

        let scoped_params =
            Array1::from_iter(problem.range.clone().map(|k| current.params()[k]));
        loop {
            let candidate = problem.step(&current, &g, trial);
            let f_new = problem.objective(&candidate)?.as_f64();
            if f_new <= f_cur - ARMIJO_C * trial * g_sq {
                prev = Some((scoped_params, g));
                current = candidate;
                f_cur = f_new;
                step = trial;
                g = problem.gradient(&current)?;
                break;
            }
            trial /= 2.0;
            if trial < 1e-18 {
                return Err(Error::numeric(format!(
                    "line search stalled at iteration {iter} (gradient norm {g_norm:.3e})"
                )));
            }
        }
    }

    let g_norm = g.iter().map(|&v| (v * v).as_f64()).sum::<f64>().sqrt();
    Err(Error::numeric(format!(
        "no convergence within {max_iters} iterations: final gradient norm {g_norm:.3e} > tol {tol:.1e}"
    )))
}

/// Damped-Newton minimizer for the same objective, for convex scopes
/// (linear models or final layers) where the exact Hessian is available and
/// positive definite. Converges in a handful of iterations; used for the
/// counterfactual retraining oracles, where thousands of refits must each
/// reach a tight stationary point.
pub fn newton_fit<F: Scalar>(
    model: &Model<F>,
    dataset: &Dataset<F>,
    scope: ParamScope,
    l2: f64,
    tol: f64,
    max_iters: usize,
) -> Result<FitOutcome<F>> {
    if l2 < 0.0 {
        return Err(Error::config("l2 strength must be non-negative"));
    }
    let problem = Problem {
        dataset,
        range: scope.range(model.arch()),
        scope,
        l2,
    };

    let mut current = model.clone();
    let mut f_cur = problem.objective(&current)?.as_f64();
    for iter in 0..max_iters {
        let g = problem.gradient(&current)?;
        let g_sq = g.iter().map(|&v| (v * v).as_f64()).sum::<f64>();
        let g_norm = g_sq.sqrt();
        if g_norm <= tol {
            return Ok(FitOutcome {
                model: current,
                grad_norm: g_norm,
                iterations: iter,
            });
        }

        // H = data Hessian + l2·I on the scope; l2 acts as the damping
        let hessian = current.hessian_risk(dataset, F::from_f64(l2), scope)?;
        let factor = cholesky(&hessian).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!(
                "newton_fit needs a positive definite scoped Hessian ({msg})"
            )),
            other => other,
        })?;
        let direction = cholesky_solve(&factor, &g);
        let descent = direction
            .iter()
            .zip(g.iter())
            .map(|(&d, &gv)| (d * gv).as_f64())
            .sum::<f64>();

        // once the Newton decrement falls below the objective's rounding
        // noise, the line search can no longer measure progress; the full
        // step is in the quadratic convergence regime, take it outright
        if descent <= 1e-12 * f_cur.abs().max(1.0) {
            let candidate = problem.step(&current, &direction, 1.0);
            f_cur = problem.objective(&candidate)?.as_f64();
            current = candidate;
            continue;
        }

        let mut trial = 1.0f64;
        loop {
            let candidate = problem.step(&current, &direction, trial);
            let f_new = problem.objective(&candidate)?.as_f64();
            if f_new <= f_cur - ARMIJO_C * trial * descent {
                current = candidate;
                f_cur = f_new;
                break;
            }
            trial /= 2.0;
            if trial < 1e-18 {
                return Err(Error::numeric(format!(
                    "newton line search stalled at iteration {iter} (gradient norm {g_norm:.3e})"
                )));
            }
        }
    }

    let g_norm = {
        let g = problem.gradient(&current)?;
        g.iter().map(|&v| (v * v).as_f64()).sum::<f64>().sqrt()
    };
    Err(Error::numeric(format!(
        "newton_fit: no convergence within {max_iters} iterations: final gradient norm {g_norm:.3e} > tol {tol:.1e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::nn::{init_params, Activation, ModelArch};

    fn setup() -> (Model<f64>, Dataset<f64>) {
        let (ds, _) = make_blobs::<f64>(40, 2, 2, 6.0, 1, 5).unwrap();
        let arch = ModelArch {
            input_dim: 2,
            hidden_dims: vec![],
            num_classes: 2,
            activation: Activation::Relu,
        };
        let model = Model::new(arch.clone(), init_params::<f64>(&arch, 1)).unwrap();
        (model, ds)
    }

    #[test]
    fn reaches_stationarity_on_regularized_logistic() {
        let (model, ds) = setup();
        let fit = minimize_risk(&model, &ds, ParamScope::All, 0.1, 1e-8, 50_000).unwrap();
        assert!(fit.grad_norm <= 1e-8);
        // restarting from the optimum terminates immediately
        let again = minimize_risk(&fit.model, &ds, ParamScope::All, 0.1, 1e-8, 10).unwrap();
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn newton_and_gradient_descent_agree() {
        let (model, ds) = setup();
        let gd = minimize_risk(&model, &ds, ParamScope::All, 0.1, 1e-10, 100_000).unwrap();
        let newton = newton_fit(&model, &ds, ParamScope::All, 0.1, 1e-10, 100).unwrap();
        assert!(newton.grad_norm <= 1e-10);
        assert!(newton.iterations < 50);
        for (a, b) in gd.model.params().iter().zip(newton.model.params().iter()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn max_iters_error_carries_grad_norm() {
        let (model, ds) = setup();
        match minimize_risk(&model, &ds, ParamScope::All, 0.1, 1e-14, 3) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("gradient norm")),
            other => panic!("expected numeric error, got {:?}", other.map(|_| ())),
        }
    }
}
