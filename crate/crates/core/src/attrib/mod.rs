//! Training-data attribution methods behind one [`Explainer`] interface.
//!
//! Five methods plus a random baseline. An explainer is initialized once
//! against a model and its training set (the expensive phase: Hessian
//! factorization, per-checkpoint gradients, final-layer refits, projection
//! draws) and is immutable afterwards; `explain` scores a test batch and
//! `self_influence` scores every training point against itself.

mod influence;
mod random;
mod representer;
mod similarity;
mod tracin;
mod trak;

pub use influence::{InfluenceExplainer, InfluenceMode};
pub use random::RandomExplainer;
pub use representer::{representer_fit, RepresenterExplainer, RepresenterState};
pub use similarity::{SimilarityExplainer, SimilarityMeasure};
pub use tracin::TracinExplainer;
pub use trak::TrakExplainer;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Model, ParamScope};
use crate::rng::{rng_from_seed, standard_normal};
use crate::scalar::Scalar;

/// Scores of every training sample for a batch of test samples: one row per
/// test sample, columns in training-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix<F> {
    pub values: Array2<F>,
    /// Model output (class) each row was explained against.
    pub test_targets: Vec<usize>,
    pub method_name: String,
    pub train_ids: Vec<usize>,
}

impl<F: Scalar> AttributionMatrix<F> {
    pub fn new(
        values: Array2<F>,
        test_targets: Vec<usize>,
        method_name: String,
        train_ids: Vec<usize>,
    ) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::config("attribution matrix requires at least one test row"));
        }
        if values.nrows() != test_targets.len() {
            return Err(Error::ShapeMismatch {
                what: "attribution test targets",
                expected: values.nrows(),
                actual: test_targets.len(),
            });
        }
        if values.ncols() != train_ids.len() {
            return Err(Error::ShapeMismatch {
                what: "attribution train ids",
                expected: values.ncols(),
                actual: train_ids.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("attribution values must be finite"));
        }
        Ok(AttributionMatrix {
            values,
            test_targets,
            method_name,
            train_ids,
        })
    }

    pub fn num_test(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_train(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, t: usize) -> Vec<F> {
        self.values.row(t).to_vec()
    }

    pub fn to_json(&self) -> Result<String> {
        let wire = AttributionWire {
            method_name: self.method_name.clone(),
            train_ids: self.train_ids.clone(),
            test_targets: self.test_targets.clone(),
            values: self
                .values
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: AttributionWire = serde_json::from_str(text)?;
        let rows = wire.values.len();
        let cols = wire.values.first().map_or(0, Vec::len);
        if wire.values.iter().any(|r| r.len() != cols) {
            return Err(Error::config("attribution file has ragged rows"));
        }
        let mut values = Array2::<F>::zeros((rows, cols));
        for (t, row) in wire.values.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                values[(t, i)] = F::from_f64(v);
            }
        }
        AttributionMatrix::new(values, wire.test_targets, wire.method_name, wire.train_ids)
    }
}

#[derive(Serialize, Deserialize)]
struct AttributionWire {
    method_name: String,
    train_ids: Vec<usize>,
    test_targets: Vec<usize>,
    values: Vec<Vec<f64>>,
}

/// A fully initialized attribution method.
pub trait Explainer<F: Scalar>: Send + Sync {
    fn name(&self) -> String;

    fn num_train(&self) -> usize;

    /// Attribution rows for a test batch: `inputs` is `num_test x d`,
    /// `targets[t]` the class each row is explained against. An empty batch
    /// is an error, never an empty matrix.
    fn explain(&self, inputs: &Array2<F>, targets: &[usize]) -> Result<AttributionMatrix<F>>;

    /// `τ(z_i, D)_i` for every training sample, using the training label as
    /// the explained output.
    fn self_influence(&self) -> Result<Array1<F>>;
}

/// Serializable configuration, one variant per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "params", rename_all = "snake_case")]
pub enum ExplainerConfig {
    Similarity {
        measure: SimilarityMeasure,
    },
    Influence {
        #[serde(default = "default_damping")]
        damping: f64,
        #[serde(default = "default_scope")]
        scope: ParamScope,
        #[serde(default)]
        mode: InfluenceMode,
    },
    Tracin {
        #[serde(default = "default_scope")]
        scope: ParamScope,
        /// 0 disables the random projection.
        #[serde(default)]
        projection_dim: usize,
        #[serde(default)]
        projection_seed: u64,
    },
    Representer {
        #[serde(default = "default_l2")]
        l2: f64,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_max_iterations")]
        max_iterations: usize,
    },
    Trak {
        /// 0 computes the exact, unprojected attribution.
        #[serde(default)]
        projection_dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Random {
        seed: u64,
    },
}

fn default_damping() -> f64 {
    1e-3
}
fn default_scope() -> ParamScope {
    ParamScope::LastLayer
}
fn default_l2() -> f64 {
    1e-2
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_max_iterations() -> usize {
    200_000
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ExplainerConfig::Similarity { .. } | ExplainerConfig::Random { .. } => Ok(()),
            ExplainerConfig::Influence { damping, mode, .. } => {
                if !(*damping > 0.0) {
                    return Err(Error::config("influence damping must be positive"));
                }
                if let InfluenceMode::LowRank { rank } = mode {
                    if *rank == 0 {
                        return Err(Error::config("influence low-rank mode needs rank >= 1"));
                    }
                }
                Ok(())
            }
            ExplainerConfig::Tracin { .. } => Ok(()),
            ExplainerConfig::Representer {
                l2,
                tolerance,
                max_iterations,
            } => {
                if !(*l2 > 0.0) {
                    return Err(Error::config("representer l2 strength must be positive"));
                }
                if !(*tolerance > 0.0) || *max_iterations == 0 {
                    return Err(Error::config(
                        "representer tolerance and max_iterations must be positive",
                    ));
                }
                Ok(())
            }
            ExplainerConfig::Trak { .. } => Ok(()),
        }
    }

    /// Short name used in attribution matrices, reports and CSV rows.
    pub fn label(&self) -> String {
        match self {
            ExplainerConfig::Similarity { measure } => match measure {
                SimilarityMeasure::Dot => "similarity_dot".into(),
                SimilarityMeasure::Cosine => "similarity_cosine".into(),
            },
            ExplainerConfig::Influence { mode, .. } => match mode {
                InfluenceMode::ExactInverse => "influence".into(),
                InfluenceMode::LowRank { rank } => format!("influence_low_rank_{rank}"),
            },
            ExplainerConfig::Tracin { projection_dim, .. } => {
                if *projection_dim > 0 {
                    format!("tracin_proj_{projection_dim}")
                } else {
                    "tracin".into()
                }
            }
            ExplainerConfig::Representer { .. } => "representer".into(),
            ExplainerConfig::Trak { projection_dim, .. } => {
                if *projection_dim > 0 {
                    format!("trak_proj_{projection_dim}")
                } else {
                    "trak".into()
                }
            }
            ExplainerConfig::Random { .. } => "random".into(),
        }
    }

    /// Whether this method sums over training checkpoints.
    pub fn needs_checkpoints(&self) -> bool {
        matches!(self, ExplainerConfig::Tracin { .. })
    }

    /// Shifts every seed this configuration carries, for repeat studies.
    /// Methods without stochastic state are returned unchanged.
    pub fn with_seed_offset(&self, offset: u64) -> ExplainerConfig {
        let mut cfg = self.clone();
        match &mut cfg {
            ExplainerConfig::Random { seed } => *seed = seed.wrapping_add(offset),
            ExplainerConfig::Trak { seed, .. } => *seed = seed.wrapping_add(offset),
            ExplainerConfig::Tracin {
                projection_seed, ..
            } => *projection_seed = projection_seed.wrapping_add(offset),
            _ => {}
        }
        cfg
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExplainerConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Initializes the configured explainer against a model and training set.
/// TracIn additionally needs the training checkpoints.
pub fn build_explainer<F: Scalar>(
    cfg: &ExplainerConfig,
    model: &Model<F>,
    dataset: &Dataset<F>,
    checkpoints: Option<&[Checkpoint<F>]>,
) -> Result<Box<dyn Explainer<F>>> {
    cfg.validate()?;
    match cfg {
        ExplainerConfig::Similarity { measure } => Ok(Box::new(SimilarityExplainer::new(
            model.clone(),
            dataset,
            *measure,
        )?)),
        ExplainerConfig::Influence {
            damping,
            scope,
            mode,
        } => Ok(Box::new(InfluenceExplainer::new(
            model.clone(),
            dataset,
            F::from_f64(*damping),
            *scope,
            *mode,
        )?)),
        ExplainerConfig::Tracin {
            scope,
            projection_dim,
            projection_seed,
        } => {
            let checkpoints = checkpoints.filter(|c| !c.is_empty()).ok_or_else(|| {
                Error::incompatible("tracin requires at least one training checkpoint")
            })?;
            Ok(Box::new(TracinExplainer::new(
                model.arch().clone(),
                dataset,
                checkpoints,
                *scope,
                *projection_dim,
                *projection_seed,
            )?))
        }
        ExplainerConfig::Representer {
            l2,
            tolerance,
            max_iterations,
        } => {
            let state = representer_fit(model, dataset, *l2, *tolerance, *max_iterations)?;
            Ok(Box::new(RepresenterExplainer::new(model.clone(), state)))
        }
        ExplainerConfig::Trak {
            projection_dim,
            seed,
        } => Ok(Box::new(TrakExplainer::new(
            model.clone(),
            dataset,
            *projection_dim,
            *seed,
        )?)),
        ExplainerConfig::Random { seed } => {
            Ok(Box::new(RandomExplainer::new(*seed, dataset.len())))
        }
    }
}

/// Dense Gaussian projection with entries `N(0, 1/k)`, shape `k x dim`.
/// One shared matrix per explainer instance, drawn from the given seed.
pub(crate) fn gaussian_projection<F: Scalar>(k: usize, dim: usize, seed: u64) -> Array2<F> {
    let mut rng = rng_from_seed(seed);
    let scale = F::from_f64(1.0 / (k as f64).sqrt());
    let mut p = Array2::<F>::zeros((k, dim));
    for i in 0..k {
        for j in 0..dim {
            p[(i, j)] = standard_normal::<F>(&mut rng) * scale;
        }
    }
    p
}

/// Shared preconditions for every `explain` implementation.
pub(crate) fn check_batch<F: Scalar>(
    model: &Model<F>,
    inputs: &Array2<F>,
    targets: &[usize],
) -> Result<()> {
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
    if inputs.ncols() != model.arch().input_dim {
        return Err(Error::ShapeMismatch {
            what: "test batch features",
            expected: model.arch().input_dim,
            actual: inputs.ncols(),
        });
    }
    for &t in targets {
        if t >= model.arch().num_classes {
            return Err(Error::LabelOutOfRange {
                label: t,
                num_classes: model.arch().num_classes,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trip_and_labels() {
        let configs = vec![
            ExplainerConfig::Similarity {
                measure: SimilarityMeasure::Cosine,
            },
            ExplainerConfig::Influence {
                damping: 1e-3,
                scope: ParamScope::LastLayer,
                mode: InfluenceMode::LowRank { rank: 8 },
            },
            ExplainerConfig::Tracin {
                scope: ParamScope::All,
                projection_dim: 16,
                projection_seed: 4,
            },
            ExplainerConfig::Representer {
                l2: 0.05,
                tolerance: 1e-9,
                max_iterations: 1000,
            },
            ExplainerConfig::Trak {
                projection_dim: 0,
                seed: 9,
            },
            ExplainerConfig::Random { seed: 1 },
        ];
        for cfg in configs {
            let text = cfg.to_json().unwrap();
            let back = ExplainerConfig::from_json(&text).unwrap();
            assert_eq!(cfg, back);
        }
        assert_eq!(
            ExplainerConfig::Similarity {
                measure: SimilarityMeasure::Dot
            }
            .label(),
            "similarity_dot"
        );
    }

    #[test]
    fn config_defaults_fill_in() {
        let cfg = ExplainerConfig::from_json(r#"{"method": "influence", "params": {}}"#).unwrap();
        match cfg {
            ExplainerConfig::Influence {
                damping,
                scope,
                mode,
            } => {
                assert_eq!(damping, 1e-3);
                assert_eq!(scope, ParamScope::LastLayer);
                assert_eq!(mode, InfluenceMode::ExactInverse);
            }
            other => panic!("unexpected parse {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(ExplainerConfig::from_json(
            r#"{"method": "influence", "params": {"damping": 0.0}}"#
        )
        .is_err());
        assert!(ExplainerConfig::from_json(r#"{"method": "nonsense", "params": {}}"#).is_err());
    }
}
