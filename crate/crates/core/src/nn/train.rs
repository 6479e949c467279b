//! Deterministic mini-batch SGD with per-epoch checkpointing.

use ndarray::Array1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, uniform_symmetric};
use crate::scalar::Scalar;

use super::{Checkpoint, Model, ModelArch};

/// Training hyperparameters. The objective is
/// `mean loss + (l2_weight / 2) · ‖θ‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_schedule: Vec<f64>,
    pub l2_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// A constant-rate schedule, checkpointing every epoch.
    pub fn constant(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            lr_schedule: vec![lr; epochs],
            l2_weight: 0.0,
            batch_size: 32,
            seed,
            checkpoint_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.lr_schedule.len() != self.epochs {
            return Err(Error::config(format!(
                "lr_schedule has {} entries for {} epochs",
                self.lr_schedule.len(),
                self.epochs
            )));
        }
        if self.lr_schedule.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.l2_weight < 0.0 {
            return Err(Error::config("l2_weight must be non-negative"));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::config("batch_size and checkpoint_every must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the full dataset after the epoch's updates.
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult<F> {
    pub model: Model<F>,
    pub checkpoints: Vec<Checkpoint<F>>,
    pub log: Vec<EpochStats>,
}

/// Draws initial parameters layer by layer from
/// `Uniform(−1/√fan_in, +1/√fan_in)`, weights then bias.
pub fn init_params<F: Scalar>(arch: &ModelArch, seed: u64) -> Array1<F> {
    let mut rng = rng_from_seed(seed);
    let mut params = Vec::with_capacity(arch.parameter_count());
    for (fan_in, fan_out) in arch.layer_dims() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..(fan_in + 1) * fan_out {
            params.push(uniform_symmetric::<F>(&mut rng, bound));
        }
    }
    Array1::from(params)
}

/// Trains a fresh model with mini-batch SGD. Deterministic in the seed:
/// the initialization stream and the per-epoch shuffle stream are both
/// derived from `cfg.seed`. A checkpoint is emitted after every
/// `checkpoint_every`-th epoch and after the final epoch.
pub fn train<F: Scalar>(
    arch: &ModelArch,
    dataset: &Dataset<F>,
    cfg: &TrainConfig,
) -> Result<TrainResult<F>> {
    arch.validate()?;
    cfg.validate()?;
    if dataset.dim() != arch.input_dim {
        return Err(Error::ShapeMismatch {
            what: "training data dimension",
            expected: arch.input_dim,
            actual: dataset.dim(),
        });
    }
    if dataset.num_classes() != arch.num_classes {
        return Err(Error::Incompatible(format!(
            "dataset has {} classes, architecture expects {}",
            dataset.num_classes(),
            arch.num_classes
        )));
    }

    let mut model = Model::new(arch.clone(), init_params(arch, derive_seed(cfg.seed, "init", 0)))?;
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, "shuffle", 0));
    let l2 = F::from_f64(cfg.l2_weight);
    let n = dataset.len();

    let mut checkpoints: Vec<Checkpoint<F>> = Vec::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = F::from_f64(cfg.lr_schedule[epoch]);
        indices.shuffle(&mut shuffle_rng);
        for batch in indices.chunks(cfg.batch_size) {
            let mut grad = Array1::<F>::zeros(model.params.len());
            for &i in batch {
                let (x, y) = dataset.sample(i);
                grad = grad + model.grad_loss(&x, y)?;
            }
            let scale = F::from_f64(1.0 / batch.len() as f64);
            grad.mapv_inplace(|g| g * scale);
            if cfg.l2_weight > 0.0 {
                grad = grad + model.params() * l2;
            }
            let params = model.params() - &(grad * lr);
            if params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            model = Model { arch: arch.clone(), params };
        }

        let mut total = 0.0;
        for i in 0..n {
            let (x, y) = dataset.sample(i);
            total += model.loss(&x, y)?.as_f64();
        }
        let mean_loss = total / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log.push(EpochStats { epoch, mean_loss });

        if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs {
            if checkpoints.last().map(|c| c.epoch) != Some(epoch) {
                checkpoints.push(Checkpoint {
                    epoch,
                    learning_rate: cfg.lr_schedule[epoch],
                    params: model.params().clone(),
                });
            }
        }
    }

    Ok(TrainResult {
        model,
        checkpoints,
        log,
    })
}

/// Which parameters a randomization pass redraws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizeScope {
    All,
    LastLayer,
}

/// Returns a copy of the model with the scoped parameters redrawn from the
/// initialization distribution. The input model is untouched.
pub fn randomize_parameters<F: Scalar>(
    model: &Model<F>,
    seed: u64,
    scope: RandomizeScope,
) -> Model<F> {
    match scope {
        RandomizeScope::All => Model {
            arch: model.arch().clone(),
            params: init_params(model.arch(), seed),
        },
        RandomizeScope::LastLayer => {
            let mut rng = rng_from_seed(seed);
            let mut params = model.params().clone();
            let range = model.arch().last_layer_range();
            let bound = 1.0 / (model.arch().feature_dim() as f64).sqrt();
            for k in range {
                params[k] = uniform_symmetric::<F>(&mut rng, bound);
            }
            Model {
                arch: model.arch().clone(),
                params,
            }
        }
    }
}
