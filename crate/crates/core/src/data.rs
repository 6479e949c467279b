//! Synthetic dataset generation and controlled corruptions.
//!
//! Each corruption returns a fresh dataset plus a [`CorruptionRecord`] holding
//! the exact ground truth (which samples were touched and how), which is what
//! the downstream metrics score against. All operations are value-semantic
//! and deterministic given their seed.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// An ordered labelled dataset: `n` rows of `d` features with labels in
/// `0..num_classes`. Sample ids are the row positions `0..n` and stay stable
/// through every corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    features: Array2<F>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(features: Array2<F>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch {
                what: "dataset labels",
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Config(format!(
                    "sample {i}: label {y} out of range for {num_classes} classes"
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("dataset features must be finite"));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<F> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (ndarray::ArrayView1<'_, F>, usize) {
        (self.features.row(i), self.labels[i])
    }

    /// Stable sample ids, always `0..n`.
    pub fn ids(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    /// Rows selected by a boolean mask, relabelled as a new dataset.
    pub fn select_mask(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::ShapeMismatch {
                what: "subset mask",
                expected: self.len(),
                actual: mask.len(),
            });
        }
        let rows: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        let features = self.features.select(Axis(0), &rows);
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.num_classes)
    }

    /// Splits off the last `floor(fraction·n)` rows as a held-out set.
    pub fn split_tail(&self, fraction: f64) -> Result<(Self, Self)> {
        let n = self.len();
        let n_test = (fraction * n as f64).floor() as usize;
        if n_test == 0 || n_test >= n {
            return Err(Error::config(format!(
                "test fraction {fraction} leaves an empty split for n={n}"
            )));
        }
        let head: Vec<bool> = (0..n).map(|i| i < n - n_test).collect();
        let tail: Vec<bool> = (0..n).map(|i| i >= n - n_test).collect();
        Ok((self.select_mask(&head)?, self.select_mask(&tail)?))
    }
}

/// A constant additive patch on fixed feature coordinates: the tabular
/// analogue of stamping a visual marker onto an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<F> {
    pub coords: Vec<usize>,
    pub offsets: Vec<F>,
}

impl<F: Scalar> Patch<F> {
    pub fn apply(&self, x: &Array1<F>) -> Array1<F> {
        let mut out = x.clone();
        for (&j, &v) in self.coords.iter().zip(self.offsets.iter()) {
            out[j] = out[j] + v;
        }
        out
    }
}

/// Exact ground truth left behind by the corruption operations.
///
/// Fields unused by a given corruption stay empty. Index sets are kept
/// sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord<F> {
    pub mislabeled_idx: Vec<usize>,
    pub original_labels: BTreeMap<usize, usize>,
    pub shortcut_idx: Vec<usize>,
    pub shortcut_class: Option<usize>,
    pub shortcut_patch: Option<Patch<F>>,
    pub adversarial_idx: Vec<usize>,
    pub adversarial_label: Option<usize>,
    /// original label -> group label, present after class grouping
    pub subclass_map: Option<BTreeMap<usize, usize>>,
    /// sample id -> original (sub-)label, present after class grouping
    pub original_subclass: Option<BTreeMap<usize, usize>>,
}

impl<F> Default for CorruptionRecord<F> {
    fn default() -> Self {
        CorruptionRecord {
            mislabeled_idx: Vec::new(),
            original_labels: BTreeMap::new(),
            shortcut_idx: Vec::new(),
            shortcut_class: None,
            shortcut_patch: None,
            adversarial_idx: Vec::new(),
            adversarial_label: None,
            subclass_map: None,
            original_subclass: None,
        }
    }
}

impl<F: Scalar> CorruptionRecord<F> {
    /// Undoes a label-space corruption (label flips or class grouping),
    /// returning the dataset with its original labels.
    pub fn restore_labels(&self, ds: &Dataset<F>) -> Result<Dataset<F>> {
        if let Some(orig) = &self.original_subclass {
            let map = self
                .subclass_map
                .as_ref()
                .ok_or_else(|| Error::config("record has original_subclass but no subclass_map"))?;
            let num_classes = map.len();
            let labels = (0..ds.len())
                .map(|i| orig.get(&i).copied().unwrap_or(ds.labels[i]))
                .collect();
            return Dataset::new(ds.features.clone(), labels, num_classes);
        }
        let labels = (0..ds.len())
            .map(|i| self.original_labels.get(&i).copied().unwrap_or(ds.labels[i]))
            .collect();
        Dataset::new(ds.features.clone(), labels, ds.num_classes)
    }
}

/// Gaussian blob generator: one unit-variance cluster per
/// `(class, subcluster)` pair, with cluster means placed on an integer
/// lattice scaled by `class_sep` so all means are at least `class_sep`
/// apart. Returns per-sample subcluster ids (`class·subclusters + sub`).
pub fn make_blobs<F: Scalar>(
    n: usize,
    d: usize,
    num_classes: usize,
    class_sep: f64,
    subclusters_per_class: usize,
    seed: u64,
) -> Result<(Dataset<F>, Vec<usize>)> {
    if num_classes < 2 || d == 0 || subclusters_per_class == 0 {
        return Err(Error::config(
            "make_blobs requires d >= 1, num_classes >= 2, subclusters >= 1",
        ));
    }
    let k = num_classes * subclusters_per_class;
    if n < k {
        return Err(Error::config(format!(
            "make_blobs: n={n} is smaller than the number of clusters {k}"
        )));
    }
    if !(class_sep > 0.0) {
        return Err(Error::config("make_blobs: class_sep must be positive"));
    }

    // Deterministic lattice placement: cluster m sits at class_sep times the
    // base-`side` digit expansion of m, so distinct clusters are >= class_sep
    // apart in every direction.
    let side = (k as f64).powf(1.0 / d as f64).ceil().max(2.0) as usize;
    let mut means = Array2::<f64>::zeros((k, d));
    for m in 0..k {
        let mut rem = m;
        for j in 0..d {
            means[(m, j)] = (rem % side) as f64 * class_sep;
            rem /= side;
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut features = Array2::<F>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut subclusters = Vec::with_capacity(n);
    for i in 0..n {
        let m = i % k;
        let class = m / subclusters_per_class;
        for j in 0..d {
            let noise: f64 = crate::rng::standard_normal::<f64>(&mut rng);
            features[(i, j)] = F::from_f64(means[(m, j)] + noise);
        }
        labels.push(class);
        subclusters.push(m);
    }
    let ds = Dataset::new(features, labels, num_classes)?;
    Ok((ds, subclusters))
}

/// Flips the labels of exactly `floor(fraction·n)` uniformly chosen samples
/// to a uniformly chosen *different* label.
pub fn flip_labels<F: Scalar>(
    ds: &Dataset<F>,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset<F>, CorruptionRecord<F>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("flip_labels: fraction must be in [0, 1)"));
    }
    let n = ds.len();
    let count = (fraction * n as f64).floor() as usize;
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order.into_iter().take(count).collect();
    chosen.sort_unstable();

    let mut labels = ds.labels.clone();
    let mut record = CorruptionRecord::default();
    for &i in &chosen {
        let old = labels[i];
        let draw = rng.random_range(0..ds.num_classes - 1);
        let new = if draw >= old { draw + 1 } else { draw };
        labels[i] = new;
        record.original_labels.insert(i, old);
    }
    record.mislabeled_idx = chosen;
    let out = Dataset::new(ds.features.clone(), labels, ds.num_classes)?;
    Ok((out, record))
}

/// Adds a constant patch to a fraction of the samples of `target_class`.
///
/// `magnitude_sigmas` is expressed in units of the per-coordinate feature
/// standard deviation, so the same setting transfers across generators. The
/// resolved additive offsets land in the record's patch, which also serves to
/// shortcut arbitrary test vectors.
pub fn inject_shortcut<F: Scalar>(
    ds: &Dataset<F>,
    target_class: usize,
    fraction: f64,
    coords: &[usize],
    magnitude_sigmas: f64,
    seed: u64,
) -> Result<(Dataset<F>, CorruptionRecord<F>)> {
    if target_class >= ds.num_classes {
        return Err(Error::LabelOutOfRange {
            label: target_class,
            num_classes: ds.num_classes,
        });
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config("inject_shortcut: fraction must be in [0, 1]"));
    }
    if coords.iter().any(|&j| j >= ds.dim()) {
        return Err(Error::config(format!(
            "inject_shortcut: patch coordinate out of range for d={}",
            ds.dim()
        )));
    }
    let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == target_class).collect();
    if members.is_empty() {
        return Err(Error::config(format!(
            "inject_shortcut: class {target_class} has no samples"
        )));
    }

    let offsets: Vec<F> = coords
        .iter()
        .map(|&j| {
            let col = ds.features.column(j);
            let n = F::from_f64(col.len() as f64);
            let mean = col.sum() / n;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            var.sqrt() * F::from_f64(magnitude_sigmas)
        })
        .collect();
    let patch = Patch {
        coords: coords.to_vec(),
        offsets,
    };

    let count = (fraction * members.len() as f64).floor() as usize;
    let mut rng = rng_from_seed(seed);
    let mut pool = members;
    pool.shuffle(&mut rng);
    let mut chosen: Vec<usize> = pool.into_iter().take(count).collect();
    chosen.sort_unstable();

    let mut features = ds.features.clone();
    for &i in &chosen {
        let patched = patch.apply(&features.row(i).to_owned());
        features.row_mut(i).assign(&patched);
    }
    let record = CorruptionRecord {
        shortcut_idx: chosen,
        shortcut_class: Some(target_class),
        shortcut_patch: Some(patch),
        ..CorruptionRecord::default()
    };
    let out = Dataset::new(features, ds.labels.clone(), ds.num_classes)?;
    Ok((out, record))
}

/// How to group original labels into coarser ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Explicit original label -> group label map, total over `0..C`.
    Map(BTreeMap<usize, usize>),
    /// Shuffle the classes with `seed` and deal them into `k` groups.
    Random { k: usize, seed: u64 },
}

/// Remaps labels into groups, keeping per-sample original labels in the
/// record so subclass metrics can score against them.
pub fn group_classes<F: Scalar>(
    ds: &Dataset<F>,
    grouping: &Grouping,
) -> Result<(Dataset<F>, CorruptionRecord<F>)> {
    let c = ds.num_classes;
    let map: BTreeMap<usize, usize> = match grouping {
        Grouping::Map(m) => {
            for label in 0..c {
                if !m.contains_key(&label) {
                    return Err(Error::config(format!(
                        "group_classes: grouping map is missing label {label}"
                    )));
                }
            }
            m.clone()
        }
        Grouping::Random { k, seed } => {
            if *k < 2 || *k > c {
                return Err(Error::config(format!(
                    "group_classes: k={k} must be in [2, {c}]"
                )));
            }
            let mut order: Vec<usize> = (0..c).collect();
            order.shuffle(&mut rng_from_seed(*seed));
            order
                .iter()
                .enumerate()
                .map(|(pos, &label)| (label, pos % k))
                .collect()
        }
    };
    let groups: std::collections::BTreeSet<usize> = map.values().copied().collect();
    let num_groups = groups.len();
    if groups.iter().max() != Some(&(num_groups - 1)) || num_groups < 2 {
        return Err(Error::config(
            "group_classes: group labels must be contiguous 0..G with G >= 2",
        ));
    }

    let labels: Vec<usize> = ds.labels.iter().map(|y| map[y]).collect();
    let record = CorruptionRecord {
        subclass_map: Some(map),
        original_subclass: Some(ds.labels.iter().copied().enumerate().collect()),
        ..CorruptionRecord::default()
    };
    let out = Dataset::new(ds.features.clone(), labels, num_groups)?;
    Ok((out, record))
}

/// Required base-to-adversarial size ratio for [`mix_datasets`].
pub const MIX_MIN_RATIO: usize = 10;

/// Appends adversarial samples, all carrying one label from the base
/// dataset. The base must be at least [`MIX_MIN_RATIO`] times larger.
pub fn mix_datasets<F: Scalar>(
    base: &Dataset<F>,
    adversarial_features: &Array2<F>,
    adversarial_label: usize,
) -> Result<(Dataset<F>, CorruptionRecord<F>)> {
    let n_adv = adversarial_features.nrows();
    if n_adv == 0 {
        return Ok((base.clone(), CorruptionRecord::default()));
    }
    if adversarial_features.ncols() != base.dim() {
        return Err(Error::ShapeMismatch {
            what: "adversarial feature dimension",
            expected: base.dim(),
            actual: adversarial_features.ncols(),
        });
    }
    if adversarial_label >= base.num_classes {
        return Err(Error::LabelOutOfRange {
            label: adversarial_label,
            num_classes: base.num_classes,
        });
    }
    if base.len() < MIX_MIN_RATIO * n_adv {
        return Err(Error::config(format!(
            "mix_datasets: base size {} must be at least {}x the adversarial size {}",
            base.len(),
            MIX_MIN_RATIO,
            n_adv
        )));
    }
    let mut features = Array2::<F>::zeros((base.len() + n_adv, base.dim()));
    features
        .slice_mut(ndarray::s![..base.len(), ..])
        .assign(&base.features);
    features
        .slice_mut(ndarray::s![base.len().., ..])
        .assign(adversarial_features);
    let mut labels = base.labels.clone();
    labels.extend(std::iter::repeat(adversarial_label).take(n_adv));
    let record = CorruptionRecord {
        adversarial_idx: (base.len()..base.len() + n_adv).collect(),
        adversarial_label: Some(adversarial_label),
        ..CorruptionRecord::default()
    };
    let out = Dataset::new(features, labels, base.num_classes)?;
    Ok((out, record))
}

/// `m` random training subsets of size `floor(alpha·n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub masks: Vec<Vec<bool>>,
    pub fraction: f64,
    pub seed: u64,
}

impl SubsetSpec {
    pub fn num_subsets(&self) -> usize {
        self.masks.len()
    }
}

/// Samples `m` distinct subset masks without replacement within each subset.
pub fn sample_subsets<F: Scalar>(
    ds: &Dataset<F>,
    m: usize,
    alpha: f64,
    seed: u64,
) -> Result<SubsetSpec> {
    let n = ds.len();
    let k = (alpha * n as f64).floor() as usize;
    if k == 0 || k >= n {
        return Err(Error::config(format!(
            "sample_subsets: alpha={alpha} gives degenerate subset size {k} for n={n}"
        )));
    }
    if m == 0 {
        return Err(Error::config("sample_subsets: m must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut mask = None;
        for _attempt in 0..100 {
            let chosen = rand::seq::index::sample(&mut rng, n, k);
            let mut candidate = vec![false; n];
            for i in chosen {
                candidate[i] = true;
            }
            if !masks.contains(&candidate) {
                mask = Some(candidate);
                break;
            }
        }
        match mask {
            Some(mask) => masks.push(mask),
            None => {
                return Err(Error::config(format!(
                    "sample_subsets: could not draw {m} distinct subsets of size {k} from n={n} \
                     (collision at subset {j})"
                )))
            }
        }
    }
    Ok(SubsetSpec {
        masks,
        fraction: alpha,
        seed,
    })
}

// ---------------------------------------------------------------------------
// JSON wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetWire {
    n: usize,
    d: usize,
    num_classes: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PatchWire {
    coords: Vec<usize>,
    offsets: Vec<f64>,
}

/// Field-for-field mirror of [`CorruptionRecord`] with `f64` payloads;
/// index sets stay sorted ascending.
#[derive(Serialize, Deserialize)]
struct RecordWire {
    mislabeled_idx: Vec<usize>,
    original_labels: BTreeMap<usize, usize>,
    shortcut_idx: Vec<usize>,
    shortcut_class: Option<usize>,
    shortcut_patch: Option<PatchWire>,
    adversarial_idx: Vec<usize>,
    adversarial_label: Option<usize>,
    subclass_map: Option<BTreeMap<usize, usize>>,
    original_subclass: Option<BTreeMap<usize, usize>>,
}

impl<F: Scalar> CorruptionRecord<F> {
    pub fn to_json(&self) -> Result<String> {
        let wire = RecordWire {
            mislabeled_idx: self.mislabeled_idx.clone(),
            original_labels: self.original_labels.clone(),
            shortcut_idx: self.shortcut_idx.clone(),
            shortcut_class: self.shortcut_class,
            shortcut_patch: self.shortcut_patch.as_ref().map(|p| PatchWire {
                coords: p.coords.clone(),
                offsets: p.offsets.iter().map(|v| v.as_f64()).collect(),
            }),
            adversarial_idx: self.adversarial_idx.clone(),
            adversarial_label: self.adversarial_label,
            subclass_map: self.subclass_map.clone(),
            original_subclass: self.original_subclass.clone(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: RecordWire = serde_json::from_str(text)?;
        Ok(CorruptionRecord {
            mislabeled_idx: wire.mislabeled_idx,
            original_labels: wire.original_labels,
            shortcut_idx: wire.shortcut_idx,
            shortcut_class: wire.shortcut_class,
            shortcut_patch: wire.shortcut_patch.map(|p| Patch {
                coords: p.coords,
                offsets: p.offsets.into_iter().map(F::from_f64).collect(),
            }),
            adversarial_idx: wire.adversarial_idx,
            adversarial_label: wire.adversarial_label,
            subclass_map: wire.subclass_map,
            original_subclass: wire.original_subclass,
        })
    }
}

impl<F: Scalar> Dataset<F> {
    pub fn to_json(&self) -> Result<String> {
        let wire = DatasetWire {
            n: self.len(),
            d: self.dim(),
            num_classes: self.num_classes,
            features: self
                .features
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
            labels: self.labels.clone(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: DatasetWire = serde_json::from_str(text)?;
        if wire.features.len() != wire.n || wire.features.iter().any(|r| r.len() != wire.d) {
            return Err(Error::config("dataset file: features do not match n x d"));
        }
        let mut features = Array2::<F>::zeros((wire.n, wire.d));
        for (i, row) in wire.features.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                features[(i, j)] = F::from_f64(v);
            }
        }
        Dataset::new(features, wire.labels, wire.num_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64) -> Dataset<f64> {
        make_blobs(40, 3, 4, 6.0, 1, seed).unwrap().0
    }

    #[test]
    fn blobs_are_deterministic() {
        let (a, subs_a) = make_blobs::<f64>(60, 2, 2, 10.0, 1, 9).unwrap();
        let (b, subs_b) = make_blobs::<f64>(60, 2, 2, 10.0, 1, 9).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(subs_a, subs_b);
    }

    #[test]
    fn blobs_subcluster_ids_cover_all_clusters() {
        let (_, subs) = make_blobs::<f64>(80, 2, 2, 5.0, 2, 1).unwrap();
        let distinct: std::collections::BTreeSet<usize> = subs.iter().copied().collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn blobs_rejects_infeasible() {
        assert!(make_blobs::<f64>(3, 2, 4, 5.0, 1, 0).is_err());
    }

    #[test]
    fn flip_zero_fraction_is_identity() {
        let ds = blobs(3);
        let (out, rec) = flip_labels(&ds, 0.0, 1).unwrap();
        assert_eq!(out.labels(), ds.labels());
        assert!(rec.mislabeled_idx.is_empty());
    }

    #[test]
    fn flip_count_and_difference_are_exact() {
        let (ds, _) = make_blobs::<f64>(10, 2, 3, 5.0, 1, 5).unwrap();
        let (out, rec) = flip_labels(&ds, 0.3, 11).unwrap();
        assert_eq!(rec.mislabeled_idx.len(), 3);
        for &i in &rec.mislabeled_idx {
            assert_ne!(out.labels()[i], ds.labels()[i]);
            assert_eq!(rec.original_labels[&i], ds.labels()[i]);
        }
        // untouched samples keep their labels
        for i in 0..ds.len() {
            if !rec.mislabeled_idx.contains(&i) {
                assert_eq!(out.labels()[i], ds.labels()[i]);
            }
        }
    }

    #[test]
    fn flip_restore_round_trips() {
        let ds = blobs(4);
        let (out, rec) = flip_labels(&ds, 0.25, 2).unwrap();
        let restored = rec.restore_labels(&out).unwrap();
        assert_eq!(restored.labels(), ds.labels());
        assert_eq!(restored.features(), ds.features());
    }

    #[test]
    fn shortcut_difference_is_exactly_the_patch() {
        let ds = blobs(6);
        let (out, rec) = inject_shortcut(&ds, 1, 0.5, &[0, 2], 3.0, 7).unwrap();
        let patch = rec.shortcut_patch.as_ref().unwrap();
        for &i in &rec.shortcut_idx {
            let orig = ds.features().row(i).to_owned();
            let expect = patch.apply(&orig);
            assert_eq!(out.features().row(i), expect);
            assert_eq!(ds.labels()[i], 1);
        }
        for i in 0..ds.len() {
            if !rec.shortcut_idx.contains(&i) {
                assert_eq!(out.features().row(i), ds.features().row(i));
            }
        }
    }

    #[test]
    fn shortcut_zero_fraction_is_identity() {
        let ds = blobs(6);
        let (out, rec) = inject_shortcut(&ds, 0, 0.0, &[1], 5.0, 3).unwrap();
        assert_eq!(out.features(), ds.features());
        assert!(rec.shortcut_idx.is_empty());
    }

    #[test]
    fn shortcut_rejects_missing_class() {
        let ds = blobs(6);
        assert!(inject_shortcut(&ds, 9, 0.5, &[0], 5.0, 3).is_err());
    }

    #[test]
    fn grouping_pairs_sums_histograms() {
        let (ds, _) = make_blobs::<f64>(40, 2, 4, 5.0, 1, 2).unwrap();
        let map: BTreeMap<usize, usize> = [(0, 0), (1, 0), (2, 1), (3, 1)].into();
        let (out, rec) = group_classes(&ds, &Grouping::Map(map)).unwrap();
        assert_eq!(out.num_classes(), 2);
        let hist = |labels: &[usize], c: usize| labels.iter().filter(|&&y| y == c).count();
        assert_eq!(
            hist(out.labels(), 0),
            hist(ds.labels(), 0) + hist(ds.labels(), 1)
        );
        let restored = rec.restore_labels(&out).unwrap();
        assert_eq!(restored.labels(), ds.labels());
        assert_eq!(restored.num_classes(), 4);
    }

    #[test]
    fn grouping_rejects_partial_map() {
        let ds = blobs(1);
        let map: BTreeMap<usize, usize> = [(0, 0), (1, 1)].into();
        assert!(group_classes(&ds, &Grouping::Map(map)).is_err());
    }

    #[test]
    fn mix_appends_and_records_tail() {
        let (base, _) = make_blobs::<f64>(200, 2, 2, 8.0, 1, 3).unwrap();
        let adv = Array2::<f64>::from_elem((20, 2), 50.0);
        let (out, rec) = mix_datasets(&base, &adv, 1).unwrap();
        assert_eq!(out.len(), 220);
        assert_eq!(rec.adversarial_idx, (200..220).collect::<Vec<_>>());
        for &i in &rec.adversarial_idx {
            assert_eq!(out.labels()[i], 1);
        }
        assert_eq!(out.features().row(0), base.features().row(0));
    }

    #[test]
    fn mix_enforces_ratio_and_empty_case() {
        let (base, _) = make_blobs::<f64>(50, 2, 2, 8.0, 1, 3).unwrap();
        let adv = Array2::<f64>::from_elem((20, 2), 50.0);
        assert!(mix_datasets(&base, &adv, 0).is_err());
        let empty = Array2::<f64>::zeros((0, 2));
        let (out, rec) = mix_datasets(&base, &empty, 0).unwrap();
        assert_eq!(out.len(), base.len());
        assert!(rec.adversarial_idx.is_empty());
    }

    #[test]
    fn subsets_have_exact_cardinality_and_reproduce() {
        let (ds, _) = make_blobs::<f64>(100, 2, 2, 8.0, 1, 3).unwrap();
        let spec = sample_subsets(&ds, 50, 0.5, 17).unwrap();
        assert_eq!(spec.masks.len(), 50);
        for mask in &spec.masks {
            assert_eq!(mask.iter().filter(|&&b| b).count(), 50);
        }
        let again = sample_subsets(&ds, 50, 0.5, 17).unwrap();
        assert_eq!(spec, again);
        // all masks distinct
        for i in 0..spec.masks.len() {
            for j in (i + 1)..spec.masks.len() {
                assert_ne!(spec.masks[i], spec.masks[j]);
            }
        }
    }

    #[test]
    fn subsets_loo_boundary() {
        let (ds, _) = make_blobs::<f64>(10, 2, 2, 8.0, 1, 3).unwrap();
        let spec = sample_subsets(&ds, 4, 0.9, 5).unwrap();
        for mask in &spec.masks {
            assert_eq!(mask.iter().filter(|&&b| !b).count(), 1);
        }
    }

    #[test]
    fn subsets_degenerate_alpha_rejected() {
        let ds = blobs(2);
        assert!(sample_subsets(&ds, 4, 0.0, 5).is_err());
        assert!(sample_subsets(&ds, 4, 1.0, 5).is_err());
    }

    #[test]
    fn dataset_json_round_trip() {
        let ds = blobs(12);
        let text = ds.to_json().unwrap();
        let back = Dataset::<f64>::from_json(&text).unwrap();
        assert_eq!(ds, back);
    }
}
