//! Controlled evaluation environments, end to end: `generate` builds
//! corrupted data and trains the models, `assemble` wraps user-provided
//! assets, `save`/`load` move hash-verified bundles to and from disk, and
//! `evaluate` runs an explainer through the bundle's paired metric.

mod manifest;

pub use manifest::{sha256_hex, Manifest, SCHEMA_VERSION};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::attrib::{build_explainer, AttributionMatrix, ExplainerConfig};
use crate::data::{
    flip_labels, group_classes, inject_shortcut, make_blobs, mix_datasets, sample_subsets,
    CorruptionRecord, Dataset, Grouping, SubsetSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{
    shortcut_filter, ClassDetectionMetric, LdsMetric, MetricResult, MislabelingMetric,
    MislabelingMode, MixedDatasetsMetric, ModelRandomizationMetric, ShortcutDetectionMetric,
    SubclassDetectionMetric, TopKCardinalityMetric,
};
use crate::nn::{
    init_params, randomize_parameters, train, Activation, Checkpoint, Model, ModelArch,
    RandomizeScope, TrainConfig,
};
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::scalar::Scalar;
use crate::stats::{detection_curve, pr_curve};

/// The eight controlled environments, one per metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    Lds,
    ClassDetection,
    SubclassDetection,
    Mislabeling,
    Shortcut,
    MixedDatasets,
    ModelRandomization,
    TopkCardinality,
}

impl BenchmarkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkKind::Lds => "lds",
            BenchmarkKind::ClassDetection => "class_detection",
            BenchmarkKind::SubclassDetection => "subclass_detection",
            BenchmarkKind::Mislabeling => "mislabeling",
            BenchmarkKind::Shortcut => "shortcut",
            BenchmarkKind::MixedDatasets => "mixed_datasets",
            BenchmarkKind::ModelRandomization => "model_randomization",
            BenchmarkKind::TopkCardinality => "topk_cardinality",
        }
    }
}

/// Kind plus the metric parameters that go with it. Bundling them in one
/// tagged enum makes "metric params consistent with kind" hold by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KindSpec {
    Lds {
        num_subsets: usize,
        alpha: f64,
    },
    ClassDetection,
    SubclassDetection {
        groups: usize,
    },
    Mislabeling {
        flip_fraction: f64,
        mode: MislabelingMode,
    },
    Shortcut {
        target_class: usize,
        fraction: f64,
        patch_coords: Vec<usize>,
        magnitude_sigmas: f64,
    },
    MixedDatasets {
        adversarial_train: usize,
        adversarial_test: usize,
        adversarial_label: usize,
        shift: f64,
    },
    ModelRandomization,
    TopkCardinality {
        k: usize,
    },
}

impl KindSpec {
    pub fn kind(&self) -> BenchmarkKind {
        match self {
            KindSpec::Lds { .. } => BenchmarkKind::Lds,
            KindSpec::ClassDetection => BenchmarkKind::ClassDetection,
            KindSpec::SubclassDetection { .. } => BenchmarkKind::SubclassDetection,
            KindSpec::Mislabeling { .. } => BenchmarkKind::Mislabeling,
            KindSpec::Shortcut { .. } => BenchmarkKind::Shortcut,
            KindSpec::MixedDatasets { .. } => BenchmarkKind::MixedDatasets,
            KindSpec::ModelRandomization => BenchmarkKind::ModelRandomization,
            KindSpec::TopkCardinality { .. } => BenchmarkKind::TopkCardinality,
        }
    }
}

/// Synthetic data parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub class_sep: f64,
    #[serde(default = "one")]
    pub subclusters_per_class: usize,
}

fn one() -> usize {
    1
}

/// Model architecture knobs: input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            hidden_dims: Vec::new(),
            activation: Activation::Relu,
        }
    }
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl ArchSpec {
    fn to_arch(&self, input_dim: usize, num_classes: usize) -> ModelArch {
        ModelArch {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            num_classes,
            activation: self.activation,
        }
    }
}

/// Training knobs; the seed is derived from the master seed at generate
/// time, and the learning rate schedule is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub l2_weight: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub checkpoint_every: usize,
}

fn default_batch_size() -> usize {
    32
}

impl TrainSpec {
    fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr_schedule: vec![self.learning_rate; self.epochs],
            l2_weight: self.l2_weight,
            batch_size: self.batch_size,
            seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

/// Everything `generate` needs; all randomness is derived from
/// `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub benchmark: KindSpec,
    pub data: BlobSpec,
    #[serde(default)]
    pub model: ArchSpec,
    pub train: TrainSpec,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub master_seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data.n == 0 || self.data.d == 0 || self.data.num_classes < 2 {
            return Err(Error::config("data spec needs n >= 1, d >= 1, num_classes >= 2"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 0.5) {
            return Err(Error::config("test_fraction must lie in (0, 0.5)"));
        }
        match &self.benchmark {
            KindSpec::Lds { num_subsets, alpha } => {
                if *num_subsets == 0 || !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(Error::config("lds needs num_subsets >= 1 and alpha in (0,1)"));
                }
            }
            KindSpec::SubclassDetection { groups } => {
                if *groups < 2 || *groups >= self.data.num_classes {
                    return Err(Error::config(
                        "subclass_detection needs 2 <= groups < num_classes",
                    ));
                }
            }
            KindSpec::Mislabeling { flip_fraction, .. } => {
                if !(*flip_fraction > 0.0 && *flip_fraction < 1.0) {
                    return Err(Error::config("mislabeling needs flip_fraction in (0,1)"));
                }
            }
            KindSpec::Shortcut {
                target_class,
                fraction,
                patch_coords,
                ..
            } => {
                if *target_class >= self.data.num_classes {
                    return Err(Error::config("shortcut target_class out of range"));
                }
                if !(*fraction > 0.0 && *fraction <= 1.0) || patch_coords.is_empty() {
                    return Err(Error::config(
                        "shortcut needs fraction in (0,1] and at least one patch coordinate",
                    ));
                }
                if patch_coords.iter().any(|&j| j >= self.data.d) {
                    return Err(Error::config("shortcut patch coordinate out of range"));
                }
            }
            KindSpec::MixedDatasets {
                adversarial_train,
                adversarial_test,
                adversarial_label,
                ..
            } => {
                if *adversarial_train == 0 || *adversarial_test == 0 {
                    return Err(Error::config(
                        "mixed_datasets needs adversarial_train >= 1 and adversarial_test >= 1",
                    ));
                }
                if *adversarial_label >= self.data.num_classes {
                    return Err(Error::config("mixed_datasets adversarial_label out of range"));
                }
            }
            KindSpec::TopkCardinality { k } => {
                if *k == 0 {
                    return Err(Error::config("topk_cardinality needs k >= 1"));
                }
            }
            KindSpec::ClassDetection | KindSpec::ModelRandomization => {}
        }
        Ok(())
    }
}

/// Cached subset-retraining outputs for the LDS benchmark:
/// `outputs[t][j] = f(z_t; D'_j)` at the cached explanation target.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsCache<F> {
    pub subsets: SubsetSpec,
    pub targets: Vec<usize>,
    pub outputs: Array2<F>,
}

/// A fully materialized controlled environment.
#[derive(Debug, Clone)]
pub struct BenchmarkBundle<F> {
    pub spec: KindSpec,
    pub train_data: Dataset<F>,
    pub test_data: Dataset<F>,
    /// Original fine labels of the test split, for subclass detection.
    pub test_subclass: Option<Vec<usize>>,
    pub model: Model<F>,
    pub checkpoints: Vec<Checkpoint<F>>,
    pub record: CorruptionRecord<F>,
    pub lds_cache: Option<LdsCache<F>>,
    pub manifest: Manifest,
}

impl<F: Scalar> BenchmarkBundle<F> {
    pub fn kind(&self) -> BenchmarkKind {
        self.spec.kind()
    }
}

fn seed_map(master: u64) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    for tag in [
        "data",
        "corruption",
        "train",
        "subsets",
        "adversarial",
        "randomize",
    ] {
        seeds.insert(tag.to_string(), derive_seed(master, tag, 0));
    }
    seeds
}

/// Materializes a bundle from scratch: synthesizes data, applies the kind's
/// corruption, trains the model (and, for LDS, every subset model), and
/// packages the ground truth. Deterministic in `cfg.master_seed`.
pub fn generate<F: Scalar>(cfg: &GenerateConfig) -> Result<BenchmarkBundle<F>> {
    cfg.validate()?;
    let seeds = seed_map(cfg.master_seed);
    let data_seed = seeds["data"];
    let corruption_seed = seeds["corruption"];
    let train_seed = seeds["train"];

    let mut manifest = Manifest::new(cfg.benchmark.kind());
    manifest.generate_config = Some(cfg.clone());
    manifest.master_seed = Some(cfg.master_seed);
    manifest.seeds = seeds.clone();

    let (full, _subclusters) = make_blobs::<F>(
        cfg.data.n,
        cfg.data.d,
        cfg.data.num_classes,
        cfg.data.class_sep,
        cfg.data.subclusters_per_class,
        data_seed,
    )?;

    match cfg.benchmark.clone() {
        KindSpec::ClassDetection | KindSpec::ModelRandomization | KindSpec::TopkCardinality { .. } => {
            let (train_data, test_data) = full.split_tail(cfg.test_fraction)?;
            let arch = cfg.model.to_arch(cfg.data.d, cfg.data.num_classes);
            let out = train(&arch, &train_data, &cfg.train.to_config(train_seed))?;
            Ok(BenchmarkBundle {
                spec: cfg.benchmark.clone(),
                train_data,
                test_data,
                test_subclass: None,
                model: out.model,
                checkpoints: out.checkpoints,
                record: CorruptionRecord::default(),
                lds_cache: None,
                manifest,
            })
        }
        KindSpec::SubclassDetection { groups } => {
            let (train_fine, test_fine) = full.split_tail(cfg.test_fraction)?;
            let (train_data, record) = group_classes(
                &train_fine,
                &Grouping::Random {
                    k: groups,
                    seed: corruption_seed,
                },
            )?;
            let map = record.subclass_map.clone().expect("grouping record");
            let (test_data, _) = group_classes(&test_fine, &Grouping::Map(map))?;
            let test_subclass = Some(test_fine.labels().to_vec());
            let arch = cfg.model.to_arch(cfg.data.d, groups);
            let out = train(&arch, &train_data, &cfg.train.to_config(train_seed))?;
            Ok(BenchmarkBundle {
                spec: cfg.benchmark.clone(),
                train_data,
                test_data,
                test_subclass,
                model: out.model,
                checkpoints: out.checkpoints,
                record,
                lds_cache: None,
                manifest,
            })
        }
        KindSpec::Mislabeling { flip_fraction, .. } => {
            // test split carved before the corruption: the metric expects
            // clean test data
            let (train_clean, test_data) = full.split_tail(cfg.test_fraction)?;
            let (train_data, record) = flip_labels(&train_clean, flip_fraction, corruption_seed)?;
            let arch = cfg.model.to_arch(cfg.data.d, cfg.data.num_classes);
            let out = train(&arch, &train_data, &cfg.train.to_config(train_seed))?;
            Ok(BenchmarkBundle {
                spec: cfg.benchmark.clone(),
                train_data,
                test_data,
                test_subclass: None,
                model: out.model,
                checkpoints: out.checkpoints,
                record,
                lds_cache: None,
                manifest,
            })
        }
        KindSpec::Shortcut {
            target_class,
            fraction,
            patch_coords,
            magnitude_sigmas,
        } => {
            // clean test split; patched test inputs are synthesized on
            // demand from non-target-class test points at evaluation time
            let (train_clean, test_data) = full.split_tail(cfg.test_fraction)?;
            let (train_data, record) = inject_shortcut(
                &train_clean,
                target_class,
                fraction,
                &patch_coords,
                magnitude_sigmas,
                corruption_seed,
            )?;
            let arch = cfg.model.to_arch(cfg.data.d, cfg.data.num_classes);
            let out = train(&arch, &train_data, &cfg.train.to_config(train_seed))?;
            Ok(BenchmarkBundle {
                spec: cfg.benchmark.clone(),
                train_data,
                test_data,
                test_subclass: None,
                model: out.model,
                checkpoints: out.checkpoints,
                record,
                lds_cache: None,
                manifest,
            })
        }
        KindSpec::MixedDatasets {
            adversarial_train,
            adversarial_test,
            adversarial_label,
            shift,
        } => {
            let mut rng = rng_from_seed(seeds["adversarial"]);
            let mut draw = |count: usize| {
                let mut m = Array2::<F>::zeros((count, cfg.data.d));
                for i in 0..count {
                    for j in 0..cfg.data.d {
                        m[(i, j)] =
                            F::from_f64(-shift) + standard_normal::<F>(&mut rng);
                    }
                }
                m
            };
            let adv_train = draw(adversarial_train);
            let adv_test = draw(adversarial_test);
            let (train_data, record) = mix_datasets(&full, &adv_train, adversarial_label)?;
            let test_data = Dataset::new(
                adv_test,
                vec![adversarial_label; adversarial_test],
                cfg.data.num_classes,
            )?;
            let arch = cfg.model.to_arch(cfg.data.d, cfg.data.num_classes);
            let out = train(&arch, &train_data, &cfg.train.to_config(train_seed))?;
            Ok(BenchmarkBundle {
                spec: cfg.benchmark.clone(),
                train_data,
                test_data,
                test_subclass: None,
                model: out.model,
                checkpoints: out.checkpoints,
                record,
                lds_cache: None,
                manifest,
            })
        }
        KindSpec::Lds { num_subsets, alpha } => {
            let (train_data, test_data) = full.split_tail(cfg.test_fraction)?;
            let arch = cfg.model.to_arch(cfg.data.d, cfg.data.num_classes);
            let out = train(&arch, &train_data, &cfg.train.to_config(train_seed))?;
            let subsets = sample_subsets(&train_data, num_subsets, alpha, seeds["subsets"])?;

            let targets: Vec<usize> = (0..test_data.len())
                .map(|t| out.model.predict(&test_data.features().row(t)))
                .collect::<Result<_>>()?;
            let mut outputs = Array2::<F>::zeros((test_data.len(), num_subsets));
            for (j, mask) in subsets.masks.iter().enumerate() {
                let subset = train_data.select_mask(mask)?;
                let retrain_seed = derive_seed(cfg.master_seed, "lds_retrain", j as u64);
                let retrained = train(&arch, &subset, &cfg.train.to_config(retrain_seed))?;
                for t in 0..test_data.len() {
                    let logits = retrained.model.forward(&test_data.features().row(t))?;
                    outputs[(t, j)] = logits[targets[t]];
                }
            }
            Ok(BenchmarkBundle {
                spec: cfg.benchmark.clone(),
                train_data,
                test_data,
                test_subclass: None,
                model: out.model,
                checkpoints: out.checkpoints,
                record: CorruptionRecord::default(),
                lds_cache: Some(LdsCache {
                    subsets,
                    targets,
                    outputs,
                }),
                manifest,
            })
        }
    }
}

/// Wraps user-provided assets into a bundle without any retraining, after
/// cross-checking their consistency.
pub fn assemble<F: Scalar>(
    spec: KindSpec,
    train_data: Dataset<F>,
    test_data: Dataset<F>,
    test_subclass: Option<Vec<usize>>,
    model: Model<F>,
    checkpoints: Vec<Checkpoint<F>>,
    record: CorruptionRecord<F>,
    lds_cache: Option<LdsCache<F>>,
) -> Result<BenchmarkBundle<F>> {
    if train_data.dim() != test_data.dim() {
        return Err(Error::Incompatible(format!(
            "train data has d={}, test data has d={}",
            train_data.dim(),
            test_data.dim()
        )));
    }
    if model.arch().input_dim != train_data.dim() {
        return Err(Error::Incompatible(format!(
            "model input_dim {} does not match data dimension {}",
            model.arch().input_dim,
            train_data.dim()
        )));
    }
    if model.arch().num_classes != train_data.num_classes() {
        return Err(Error::Incompatible(format!(
            "model has {} classes, training data has {}",
            model.arch().num_classes,
            train_data.num_classes()
        )));
    }
    for ckpt in &checkpoints {
        if ckpt.params.len() != model.arch().parameter_count() {
            return Err(Error::Incompatible(format!(
                "checkpoint at epoch {} has {} parameters, architecture needs {}",
                ckpt.epoch,
                ckpt.params.len(),
                model.arch().parameter_count()
            )));
        }
    }
    let n = train_data.len();
    let in_range = |set: &[usize]| set.iter().all(|&i| i < n);
    if !in_range(&record.mislabeled_idx)
        || !in_range(&record.shortcut_idx)
        || !in_range(&record.adversarial_idx)
    {
        return Err(Error::Incompatible(
            "corruption record indexes samples outside the training set".into(),
        ));
    }
    match &spec {
        KindSpec::Mislabeling { .. } if record.mislabeled_idx.is_empty() => {
            return Err(Error::Incompatible(
                "mislabeling bundle needs a record with mislabeled indices".into(),
            ));
        }
        KindSpec::Shortcut { .. }
            if record.shortcut_idx.is_empty() || record.shortcut_patch.is_none() =>
        {
            return Err(Error::Incompatible(
                "shortcut bundle needs a record with shortcut indices and the patch".into(),
            ));
        }
        KindSpec::MixedDatasets { .. } if record.adversarial_idx.is_empty() => {
            return Err(Error::Incompatible(
                "mixed-datasets bundle needs a record with adversarial indices".into(),
            ));
        }
        KindSpec::SubclassDetection { .. } => {
            if record.original_subclass.is_none() {
                return Err(Error::Incompatible(
                    "subclass bundle needs per-sample original labels in the record".into(),
                ));
            }
            match &test_subclass {
                Some(labels) if labels.len() == test_data.len() => {}
                _ => {
                    return Err(Error::Incompatible(
                        "subclass bundle needs original labels for every test sample".into(),
                    ));
                }
            }
        }
        KindSpec::Lds { num_subsets, .. } => match &lds_cache {
            Some(cache) => {
                if cache.subsets.masks.len() != *num_subsets
                    || cache.outputs.nrows() != test_data.len()
                    || cache.targets.len() != test_data.len()
                {
                    return Err(Error::Incompatible(
                        "lds cache does not match the subset count or test split".into(),
                    ));
                }
            }
            None => {
                return Err(Error::Incompatible(
                    "lds bundle needs the cached subset-retraining outputs".into(),
                ));
            }
        },
        _ => {}
    }

    let mut manifest = Manifest::new(spec.kind());
    manifest
        .seeds
        .insert("randomize".into(), derive_seed(0, "randomize", 0));
    if checkpoints.is_empty() {
        manifest
            .warnings
            .push("bundle has no checkpoints: tracin explainers will be incompatible".into());
    }
    Ok(BenchmarkBundle {
        spec,
        train_data,
        test_data,
        test_subclass,
        model,
        checkpoints,
        record,
        lds_cache,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TestSplitWire {
    dataset: serde_json::Value,
    subclass_labels: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct LdsCacheWire {
    subsets: SubsetSpec,
    targets: Vec<usize>,
    outputs: Vec<Vec<f64>>,
}

/// Writes the bundle as a directory: data, model, checkpoints, record,
/// metric parameters, the LDS cache when present, and last a manifest
/// carrying a sha256 per file.
pub fn save<F: Scalar>(bundle: &BenchmarkBundle<F>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = bundle.manifest.clone();
    manifest.hashes.clear();

    manifest::write_hashed(dir, "dataset.json", &bundle.train_data.to_json()?, &mut manifest)?;
    let test_wire = TestSplitWire {
        dataset: serde_json::from_str(&bundle.test_data.to_json()?)?,
        subclass_labels: bundle.test_subclass.clone(),
    };
    manifest::write_hashed(
        dir,
        "test.json",
        &serde_json::to_string_pretty(&test_wire)?,
        &mut manifest,
    )?;
    manifest::write_hashed(dir, "model.json", &bundle.model.to_json()?, &mut manifest)?;
    manifest::write_hashed(dir, "record.json", &bundle.record.to_json()?, &mut manifest)?;
    manifest::write_hashed(
        dir,
        "metric.json",
        &serde_json::to_string_pretty(&bundle.spec)?,
        &mut manifest,
    )?;
    for ckpt in &bundle.checkpoints {
        manifest::write_hashed(
            dir,
            &format!("checkpoints/ckpt_{}.json", ckpt.epoch),
            &ckpt.to_json()?,
            &mut manifest,
        )?;
    }
    if let Some(cache) = &bundle.lds_cache {
        let wire = LdsCacheWire {
            subsets: cache.subsets.clone(),
            targets: cache.targets.clone(),
            outputs: cache
                .outputs
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
        };
        manifest::write_hashed(
            dir,
            "lds_cache.json",
            &serde_json::to_string_pretty(&wire)?,
            &mut manifest,
        )?;
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Loads a bundle directory, verifying the schema version and every file
/// hash before parsing.
pub fn load<F: Scalar>(dir: &Path) -> Result<BenchmarkBundle<F>> {
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::Integrity(format!("missing manifest.json: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    manifest.check_schema()?;

    let train_data =
        Dataset::<F>::from_json(&manifest::read_verified(dir, "dataset.json", &manifest)?)?;
    let test_wire: TestSplitWire =
        serde_json::from_str(&manifest::read_verified(dir, "test.json", &manifest)?)?;
    let test_data = Dataset::<F>::from_json(&serde_json::to_string(&test_wire.dataset)?)?;
    let model = Model::<F>::from_json(&manifest::read_verified(dir, "model.json", &manifest)?)?;
    let record =
        CorruptionRecord::<F>::from_json(&manifest::read_verified(dir, "record.json", &manifest)?)?;
    let spec: KindSpec =
        serde_json::from_str(&manifest::read_verified(dir, "metric.json", &manifest)?)?;

    let mut checkpoints: Vec<Checkpoint<F>> = Vec::new();
    for rel in manifest.hashes.keys() {
        if rel.starts_with("checkpoints/") {
            checkpoints.push(Checkpoint::from_json(&manifest::read_verified(
                dir, rel, &manifest,
            )?)?);
        }
    }
    checkpoints.sort_by_key(|c| c.epoch);

    let lds_cache = if manifest.hashes.contains_key("lds_cache.json") {
        let wire: LdsCacheWire =
            serde_json::from_str(&manifest::read_verified(dir, "lds_cache.json", &manifest)?)?;
        let rows = wire.outputs.len();
        let cols = wire.outputs.first().map_or(0, Vec::len);
        let mut outputs = Array2::<F>::zeros((rows, cols));
        for (t, row) in wire.outputs.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Integrity("ragged lds cache output matrix".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                outputs[(t, j)] = F::from_f64(v);
            }
        }
        Some(LdsCache {
            subsets: wire.subsets,
            targets: wire.targets,
            outputs,
        })
    } else {
        None
    };

    if spec.kind() != manifest.kind {
        return Err(Error::Integrity(format!(
            "manifest kind {:?} disagrees with metric.json {:?}",
            manifest.kind,
            spec.kind()
        )));
    }

    Ok(BenchmarkBundle {
        spec,
        train_data,
        test_data,
        test_subclass: test_wire.subclass_labels,
        model,
        checkpoints,
        record,
        lds_cache,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Attribution source for an evaluation: a method to initialize, or a
/// previously computed matrix.
pub enum EvalInput<'a, F> {
    Config(&'a ExplainerConfig),
    Precomputed(&'a AttributionMatrix<F>),
}

/// The test batch an evaluation (or `attribute` run) feeds the explainer:
/// possibly transformed and filtered test inputs, with explanation targets.
pub struct EvalPlan<F> {
    pub inputs: Array2<F>,
    pub targets: Vec<usize>,
    /// Indices into the bundle's test split for each plan row.
    pub rows: Vec<usize>,
}

/// Builds the evaluation batch for the bundle's kind: the default is the
/// full test split explained at the model's predicted class; shortcut
/// bundles patch and filter, mixed-dataset bundles keep correctly predicted
/// adversarial samples, LDS reuses the cached targets.
pub fn eval_plan<F: Scalar>(bundle: &BenchmarkBundle<F>) -> Result<EvalPlan<F>> {
    let test = &bundle.test_data;
    match &bundle.spec {
        KindSpec::Lds { .. } => {
            let cache = bundle
                .lds_cache
                .as_ref()
                .ok_or_else(|| Error::incompatible("lds bundle is missing its cache"))?;
            Ok(EvalPlan {
                inputs: test.features().clone(),
                targets: cache.targets.clone(),
                rows: (0..test.len()).collect(),
            })
        }
        KindSpec::Shortcut { .. } => {
            let class = bundle
                .record
                .shortcut_class
                .ok_or_else(|| Error::incompatible("shortcut bundle record lacks the class"))?;
            let patch = bundle
                .record
                .shortcut_patch
                .as_ref()
                .ok_or_else(|| Error::incompatible("shortcut bundle record lacks the patch"))?;
            let mut rows = Vec::new();
            let mut kept: Vec<Array1<F>> = Vec::new();
            for t in 0..test.len() {
                if test.labels()[t] == class {
                    continue;
                }
                let x = test.features().row(t);
                if shortcut_filter(&bundle.model, patch, class, &x)? {
                    kept.push(patch.apply(&x.to_owned()));
                    rows.push(t);
                }
            }
            let mut inputs = Array2::<F>::zeros((kept.len(), test.dim()));
            for (i, row) in kept.iter().enumerate() {
                inputs.row_mut(i).assign(row);
            }
            Ok(EvalPlan {
                inputs,
                targets: vec![class; rows.len()],
                rows,
            })
        }
        KindSpec::MixedDatasets { .. } => {
            let label = bundle
                .record
                .adversarial_label
                .ok_or_else(|| Error::incompatible("mixed bundle record lacks the label"))?;
            let mut rows = Vec::new();
            for t in 0..test.len() {
                if bundle.model.predict(&test.features().row(t))? == label {
                    rows.push(t);
                }
            }
            let inputs = test.features().select(ndarray::Axis(0), &rows);
            Ok(EvalPlan {
                inputs,
                targets: vec![label; rows.len()],
                rows,
            })
        }
        _ => {
            let targets: Vec<usize> = (0..test.len())
                .map(|t| bundle.model.predict(&test.features().row(t)))
                .collect::<Result<_>>()?;
            Ok(EvalPlan {
                inputs: test.features().clone(),
                targets,
                rows: (0..test.len()).collect(),
            })
        }
    }
}

fn attributions_for<F: Scalar>(
    bundle: &BenchmarkBundle<F>,
    input: &EvalInput<'_, F>,
    plan: &EvalPlan<F>,
) -> Result<AttributionMatrix<F>> {
    match input {
        EvalInput::Config(cfg) => {
            let explainer = build_explainer(
                cfg,
                &bundle.model,
                &bundle.train_data,
                Some(&bundle.checkpoints),
            )?;
            explainer.explain(&plan.inputs, &plan.targets)
        }
        EvalInput::Precomputed(matrix) => {
            if matrix.num_train() != bundle.train_data.len() {
                return Err(Error::Incompatible(format!(
                    "precomputed attributions cover {} training samples, bundle has {}",
                    matrix.num_train(),
                    bundle.train_data.len()
                )));
            }
            if matrix.num_test() != plan.rows.len() || matrix.test_targets != plan.targets {
                return Err(Error::Incompatible(
                    "precomputed attributions do not match the bundle's evaluation batch \
                     (row count or targets differ)"
                        .into(),
                ));
            }
            Ok((*matrix).clone())
        }
    }
}

fn check_compatibility<F: Scalar>(
    bundle: &BenchmarkBundle<F>,
    input: &EvalInput<'_, F>,
) -> Result<()> {
    if let EvalInput::Config(cfg) = input {
        if cfg.needs_checkpoints() && bundle.checkpoints.is_empty() {
            return Err(Error::incompatible(
                "tracin explainer requires checkpoints, but the bundle has none",
            ));
        }
    }
    if let EvalInput::Precomputed(_) = input {
        match &bundle.spec {
            KindSpec::ModelRandomization => {
                return Err(Error::incompatible(
                    "model randomization needs explanations from two models and cannot run \
                     from precomputed attributions",
                ));
            }
            KindSpec::Mislabeling {
                mode: MislabelingMode::SelfInfluence,
                ..
            } => {
                return Err(Error::incompatible(
                    "mislabeling in self_influence mode needs the explainer itself, not \
                     precomputed attributions",
                ));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Plot-ready curve data emitted alongside certain metric evaluations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveData {
    pub curve: String,
    pub points: Vec<(f64, f64)>,
}

/// Runs the configured explainer through the bundle's paired metric.
pub fn evaluate<F: Scalar>(
    bundle: &BenchmarkBundle<F>,
    input: EvalInput<'_, F>,
) -> Result<MetricResult> {
    evaluate_with_curves(bundle, input).map(|(result, _)| result)
}

/// Like [`evaluate`], additionally returning plot data: the cumulative
/// detection curve for mislabeling bundles, and the precision-recall curve
/// of the aggregated attribution row for the AUPRC-based bundles.
pub fn evaluate_with_curves<F: Scalar>(
    bundle: &BenchmarkBundle<F>,
    input: EvalInput<'_, F>,
) -> Result<(MetricResult, Option<CurveData>)> {
    check_compatibility(bundle, &input)?;
    match &bundle.spec {
        KindSpec::Lds { .. } => {
            let cache = bundle.lds_cache.as_ref().expect("checked in eval_plan");
            let plan = eval_plan(bundle)?;
            let attributions = attributions_for(bundle, &input, &plan)?;
            let mut metric = LdsMetric::new();
            metric.update(&attributions, &cache.outputs, &cache.subsets)?;
            Ok((metric.compute()?, None))
        }
        KindSpec::ClassDetection => {
            let plan = eval_plan(bundle)?;
            let attributions = attributions_for(bundle, &input, &plan)?;
            let mut metric = ClassDetectionMetric::new(bundle.train_data.labels().to_vec());
            metric.update(&attributions, &plan.targets)?;
            Ok((metric.compute()?, None))
        }
        KindSpec::SubclassDetection { .. } => {
            let train_subclass = subclass_vector(bundle)?;
            let test_subclass = bundle.test_subclass.clone().ok_or_else(|| {
                Error::incompatible("subclass bundle lacks test-split original labels")
            })?;
            let plan = eval_plan(bundle)?;
            let attributions = attributions_for(bundle, &input, &plan)?;
            let kept: Vec<usize> = plan.rows.iter().map(|&t| test_subclass[t]).collect();
            let mut metric = SubclassDetectionMetric::new(train_subclass);
            metric.update(&attributions, &kept)?;
            Ok((metric.compute()?, None))
        }
        KindSpec::Mislabeling { mode, .. } => {
            let mut metric =
                MislabelingMetric::new(&bundle.record, bundle.train_data.len(), *mode)?;
            match (mode, &input) {
                (MislabelingMode::SelfInfluence, EvalInput::Config(cfg)) => {
                    let explainer = build_explainer(
                        cfg,
                        &bundle.model,
                        &bundle.train_data,
                        Some(&bundle.checkpoints),
                    )?;
                    metric.update_scores(&explainer.self_influence()?)?;
                }
                (MislabelingMode::Aggregate(_), input) => {
                    let plan = eval_plan(bundle)?;
                    let attributions = attributions_for(bundle, input, &plan)?;
                    metric.update(&attributions)?;
                }
                (MislabelingMode::SelfInfluence, EvalInput::Precomputed(_)) => {
                    unreachable!("rejected by check_compatibility")
                }
            }
            let curve = metric.curve()?;
            let result = metric.compute()?;
            Ok((
                result,
                Some(CurveData {
                    curve: "cumulative_detection".into(),
                    points: curve,
                }),
            ))
        }
        KindSpec::Shortcut { .. } => {
            let plan = eval_plan(bundle)?;
            let mut metric = ShortcutDetectionMetric::new(&bundle.record)?;
            let curve = if plan.rows.is_empty() {
                None
            } else {
                let attributions = attributions_for(bundle, &input, &plan)?;
                metric.update(&attributions)?;
                Some(aggregate_pr_curve(&attributions, &bundle.record.shortcut_idx)?)
            };
            Ok((metric.compute()?, curve))
        }
        KindSpec::MixedDatasets { .. } => {
            let plan = eval_plan(bundle)?;
            let mut metric = MixedDatasetsMetric::new(&bundle.record)?;
            let curve = if plan.rows.is_empty() {
                None
            } else {
                let attributions = attributions_for(bundle, &input, &plan)?;
                metric.update(&attributions)?;
                Some(aggregate_pr_curve(
                    &attributions,
                    &bundle.record.adversarial_idx,
                )?)
            };
            Ok((metric.compute()?, curve))
        }
        KindSpec::ModelRandomization => {
            let cfg = match &input {
                EvalInput::Config(cfg) => cfg,
                EvalInput::Precomputed(_) => unreachable!("rejected by check_compatibility"),
            };
            let plan = eval_plan(bundle)?;
            let original = attributions_for(bundle, &EvalInput::Config(cfg), &plan)?;

            let rand_seed = *bundle
                .manifest
                .seeds
                .get("randomize")
                .unwrap_or(&derive_seed(0, "randomize", 0));
            let rand_model =
                randomize_parameters(&bundle.model, rand_seed, RandomizeScope::All);
            let rand_checkpoints: Vec<Checkpoint<F>> = bundle
                .checkpoints
                .iter()
                .enumerate()
                .map(|(i, c)| Checkpoint {
                    epoch: c.epoch,
                    learning_rate: c.learning_rate,
                    params: init_params(
                        bundle.model.arch(),
                        derive_seed(rand_seed, "checkpoint", i as u64),
                    ),
                })
                .collect();
            let rand_explainer = build_explainer(
                cfg,
                &rand_model,
                &bundle.train_data,
                Some(&rand_checkpoints),
            )?;
            let randomized = rand_explainer.explain(&plan.inputs, &plan.targets)?;

            let mut metric = ModelRandomizationMetric::new();
            metric.update(&original, &randomized)?;
            Ok((metric.compute()?, None))
        }
        KindSpec::TopkCardinality { k } => {
            let plan = eval_plan(bundle)?;
            let attributions = attributions_for(bundle, &input, &plan)?;
            let mut metric = TopKCardinalityMetric::new(*k)?;
            metric.update(&attributions)?;
            Ok((metric.compute()?, None))
        }
    }
}

fn subclass_vector<F: Scalar>(bundle: &BenchmarkBundle<F>) -> Result<Vec<usize>> {
    let map = bundle
        .record
        .original_subclass
        .as_ref()
        .ok_or_else(|| Error::incompatible("subclass bundle record lacks original labels"))?;
    (0..bundle.train_data.len())
        .map(|i| {
            map.get(&i).copied().ok_or_else(|| {
                Error::Incompatible(format!("record lacks the original label of sample {i}"))
            })
        })
        .collect()
}

/// PR curve of the column-summed attribution matrix, the global ranking a
/// reader would plot for an AUPRC metric.
fn aggregate_pr_curve<F: Scalar>(
    attributions: &AttributionMatrix<F>,
    positives: &[usize],
) -> Result<CurveData> {
    let mut totals = vec![F::zero(); attributions.num_train()];
    for t in 0..attributions.num_test() {
        for (acc, v) in totals.iter_mut().zip(attributions.values.row(t)) {
            *acc = *acc + *v;
        }
    }
    Ok(CurveData {
        curve: "precision_recall".into(),
        points: pr_curve(&totals, positives)?,
    })
}

/// Cumulative detection curve for an arbitrary global score vector; used by
/// the CLI to emit plot data without recomputing metrics.
pub fn detection_curve_for<F: Scalar>(
    scores: &[F],
    positives: &[usize],
) -> Result<Vec<(f64, f64)>> {
    let ranking = crate::stats::descending_order(scores);
    detection_curve(&ranking, positives)
}
