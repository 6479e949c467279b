//! Baseline explainer: i.i.d. standard-normal scores, seeded. Every metric
//! should place it at its chance level.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::scalar::Scalar;

use super::{AttributionMatrix, Explainer};

pub struct RandomExplainer {
    seed: u64,
    num_train: usize,
}

impl RandomExplainer {
    pub fn new(seed: u64, num_train: usize) -> Self {
        RandomExplainer { seed, num_train }
    }
}

impl<F: Scalar> Explainer<F> for RandomExplainer {
    fn name(&self) -> String {
        "random".into()
    }

    fn num_train(&self) -> usize {
        self.num_train
    }

    fn explain(&self, inputs: &Array2<F>, targets: &[usize]) -> Result<AttributionMatrix<F>> {
        if inputs.nrows() == 0 {
            return Err(Error::config("explain requires a non-empty test batch"));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::ShapeMismatch {
                what: "test batch targets",
                expected: inputs.nrows(),
                actual: targets.len(),
            });
        }
        let mut rng = rng_from_seed(self.seed);
        let mut values = Array2::<F>::zeros((inputs.nrows(), self.num_train));
        for t in 0..inputs.nrows() {
            for i in 0..self.num_train {
                values[(t, i)] = standard_normal(&mut rng);
            }
        }
        AttributionMatrix::new(
            values,
            targets.to_vec(),
            "random".into(),
            (0..self.num_train).collect(),
        )
    }

    fn self_influence(&self) -> Result<Array1<F>> {
        let mut rng = rng_from_seed(derive_seed(self.seed, "self_influence", 0));
        Ok(Array1::from_iter(
            (0..self.num_train).map(|_| standard_normal(&mut rng)),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_matrix() {
        let e = RandomExplainer::new(5, 20);
        let batch = Array2::<f64>::zeros((4, 3));
        let targets = vec![0; 4];
        let a = Explainer::<f64>::explain(&e, &batch, &targets).unwrap();
        let b = Explainer::<f64>::explain(&e, &batch, &targets).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn different_seeds_differ() {
        let batch = Array2::<f64>::zeros((2, 3));
        let targets = vec![0; 2];
        let a = Explainer::<f64>::explain(&RandomExplainer::new(1, 10), &batch, &targets).unwrap();
        let b = Explainer::<f64>::explain(&RandomExplainer::new(2, 10), &batch, &targets).unwrap();
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn entries_center_on_zero() {
        let e = RandomExplainer::new(99, 1000);
        let batch = Array2::<f64>::zeros((100, 1));
        let targets = vec![0; 100];
        let m = Explainer::<f64>::explain(&e, &batch, &targets).unwrap();
        let mean = m.values.iter().sum::<f64>() / (100.0 * 1000.0);
        // CLT: std of the mean over 1e5 draws is ~0.0032
        assert!(mean.abs() < 0.02, "mean {mean}");
    }
}
