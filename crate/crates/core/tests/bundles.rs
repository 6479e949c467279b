//! Bundle lifecycle: generate, save, load, assemble, evaluate.

use tdabench_core::attrib::{ExplainerConfig, SimilarityMeasure};
use tdabench_core::bench::{
    assemble, evaluate, generate, load, save, ArchSpec, BenchmarkKind, BlobSpec, EvalInput,
    GenerateConfig, KindSpec, TrainSpec,
};
use tdabench_core::error::Error;
use tdabench_core::metrics::MislabelingMode;

fn base_config(benchmark: KindSpec, seed: u64) -> GenerateConfig {
    GenerateConfig {
        benchmark,
        data: BlobSpec {
            n: 120,
            d: 4,
            num_classes: 3,
            class_sep: 6.0,
            subclusters_per_class: 1,
        },
        model: ArchSpec::default(),
        train: TrainSpec {
            epochs: 12,
            learning_rate: 0.3,
            l2_weight: 0.0,
            batch_size: 16,
            checkpoint_every: 4,
        },
        test_fraction: 0.2,
        master_seed: seed,
    }
}

#[test]
fn mislabeling_bundle_has_exact_flip_count() {
    let cfg = base_config(
        KindSpec::Mislabeling {
            flip_fraction: 0.3,
            mode: MislabelingMode::SelfInfluence,
        },
        11,
    );
    let bundle = generate::<f64>(&cfg).unwrap();
    // 120 samples, 20% test split -> 96 training rows, 30% flipped
    assert_eq!(bundle.train_data.len(), 96);
    assert_eq!(bundle.record.mislabeled_idx.len(), 28);
    assert_eq!(bundle.test_data.len(), 24);
    assert_eq!(bundle.kind(), BenchmarkKind::Mislabeling);
}

#[test]
fn generation_is_deterministic() {
    let cfg = base_config(KindSpec::ClassDetection, 21);
    let a = generate::<f64>(&cfg).unwrap();
    let b = generate::<f64>(&cfg).unwrap();
    assert_eq!(a.train_data, b.train_data);
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.record, b.record);
    assert_eq!(a.checkpoints.len(), b.checkpoints.len());
}

#[test]
fn lds_bundle_caches_expected_shape_and_is_regenerable() {
    let mut cfg = base_config(
        KindSpec::Lds {
            num_subsets: 16,
            alpha: 0.5,
        },
        31,
    );
    cfg.data.n = 60;
    cfg.train.epochs = 6;
    let bundle = generate::<f64>(&cfg).unwrap();
    let cache = bundle.lds_cache.as_ref().unwrap();
    assert_eq!(cache.outputs.nrows(), bundle.test_data.len());
    assert_eq!(cache.outputs.ncols(), 16);

    // the manifest's config regenerates the bundle bit-identically
    let again = generate::<f64>(bundle.manifest.generate_config.as_ref().unwrap()).unwrap();
    assert_eq!(again.lds_cache.as_ref().unwrap().outputs, cache.outputs);
    assert_eq!(again.model.params(), bundle.model.params());
}

#[test]
fn save_load_round_trips_bit_exactly() {
    let cfg = base_config(
        KindSpec::Shortcut {
            target_class: 1,
            fraction: 0.5,
            patch_coords: vec![0, 2],
            magnitude_sigmas: 10.0,
        },
        41,
    );
    let bundle = generate::<f64>(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save(&bundle, dir.path()).unwrap();
    let loaded = load::<f64>(dir.path()).unwrap();

    assert_eq!(loaded.train_data, bundle.train_data);
    assert_eq!(loaded.test_data, bundle.test_data);
    assert_eq!(loaded.model.params(), bundle.model.params());
    assert_eq!(loaded.record, bundle.record);
    assert_eq!(loaded.checkpoints.len(), bundle.checkpoints.len());
    for (a, b) in loaded.checkpoints.iter().zip(&bundle.checkpoints) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.params, b.params);
    }

    // saving the loaded bundle reproduces identical content hashes
    let dir2 = tempfile::tempdir().unwrap();
    save(&loaded, dir2.path()).unwrap();
    let m1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let m2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir2.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m1["hashes"], m2["hashes"]);
}

#[test]
fn corrupted_bundle_file_fails_integrity_check() {
    let cfg = base_config(KindSpec::ClassDetection, 51);
    let bundle = generate::<f64>(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save(&bundle, dir.path()).unwrap();

    let target = dir.path().join("dataset.json");
    let mut text = std::fs::read_to_string(&target).unwrap();
    text.push(' ');
    std::fs::write(&target, text).unwrap();

    match load::<f64>(dir.path()) {
        Err(Error::Integrity(msg)) => assert!(msg.contains("dataset.json")),
        other => panic!("expected integrity error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn future_schema_version_is_rejected() {
    let cfg = base_config(KindSpec::ClassDetection, 52);
    let bundle = generate::<f64>(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save(&bundle, dir.path()).unwrap();

    let manifest_path = dir.path().join("manifest.json");
    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["schema_version"] = serde_json::json!(99);
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    match load::<f64>(dir.path()) {
        Err(Error::UnsupportedSchema { found: 99, .. }) => {}
        other => panic!("expected schema error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn assemble_reproduces_an_equivalent_bundle() {
    let cfg = base_config(
        KindSpec::Mislabeling {
            flip_fraction: 0.25,
            mode: MislabelingMode::SelfInfluence,
        },
        61,
    );
    let bundle = generate::<f64>(&cfg).unwrap();
    let rebuilt = assemble(
        bundle.spec.clone(),
        bundle.train_data.clone(),
        bundle.test_data.clone(),
        None,
        bundle.model.clone(),
        bundle.checkpoints.clone(),
        bundle.record.clone(),
        None,
    )
    .unwrap();

    let cfg_sim = ExplainerConfig::Similarity {
        measure: SimilarityMeasure::Dot,
    };
    let a = evaluate(&bundle, EvalInput::Config(&cfg_sim)).unwrap();
    let b = evaluate(&rebuilt, EvalInput::Config(&cfg_sim)).unwrap();
    assert_eq!(a.score, b.score);
}

#[test]
fn assemble_rejects_mismatched_classes() {
    let cfg = base_config(KindSpec::ClassDetection, 62);
    let bundle = generate::<f64>(&cfg).unwrap();
    let wrong_cfg = base_config(KindSpec::ClassDetection, 63);
    let other = {
        let mut c = wrong_cfg;
        c.data.num_classes = 4;
        c.data.n = 121;
        generate::<f64>(&c).unwrap()
    };
    match assemble(
        bundle.spec.clone(),
        other.train_data.clone(),
        other.test_data.clone(),
        None,
        bundle.model.clone(),
        vec![],
        bundle.record.clone(),
        None,
    ) {
        Err(Error::Incompatible(msg)) => assert!(msg.contains("classes")),
        other => panic!("expected incompatibility, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn assemble_without_checkpoints_records_a_warning() {
    let cfg = base_config(KindSpec::ClassDetection, 64);
    let bundle = generate::<f64>(&cfg).unwrap();
    let rebuilt = assemble(
        bundle.spec.clone(),
        bundle.train_data.clone(),
        bundle.test_data.clone(),
        None,
        bundle.model.clone(),
        vec![],
        bundle.record.clone(),
        None,
    )
    .unwrap();
    assert!(rebuilt
        .manifest
        .warnings
        .iter()
        .any(|w| w.contains("tracin")));
    // and evaluating tracin against it is a named incompatibility
    let tracin = ExplainerConfig::Tracin {
        scope: tdabench_core::nn::ParamScope::LastLayer,
        projection_dim: 0,
        projection_seed: 0,
    };
    match evaluate(&rebuilt, EvalInput::Config(&tracin)) {
        Err(Error::Incompatible(msg)) => assert!(msg.contains("checkpoint")),
        other => panic!("expected incompatibility, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn evaluate_twice_is_identical_and_save_load_invariant() {
    let cfg = base_config(
        KindSpec::TopkCardinality { k: 5 },
        71,
    );
    let bundle = generate::<f64>(&cfg).unwrap();
    let explainer = ExplainerConfig::Random { seed: 5 };
    let a = evaluate(&bundle, EvalInput::Config(&explainer)).unwrap();
    let b = evaluate(&bundle, EvalInput::Config(&explainer)).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    save(&bundle, dir.path()).unwrap();
    let loaded = load::<f64>(dir.path()).unwrap();
    let c = evaluate(&loaded, EvalInput::Config(&explainer)).unwrap();
    assert_eq!(a.score, c.score);
}

#[test]
fn subclass_bundle_wires_fine_labels_through() {
    let mut cfg = base_config(KindSpec::SubclassDetection { groups: 2 }, 81);
    cfg.data.num_classes = 4;
    cfg.data.n = 160;
    let bundle = generate::<f64>(&cfg).unwrap();
    assert_eq!(bundle.train_data.num_classes(), 2);
    let subclass = bundle.test_subclass.as_ref().unwrap();
    assert_eq!(subclass.len(), bundle.test_data.len());
    assert!(subclass.iter().any(|&s| s >= 2), "fine labels preserved");
    let record_map = bundle.record.subclass_map.as_ref().unwrap();
    assert_eq!(record_map.len(), 4);

    let cfg_sim = ExplainerConfig::Similarity {
        measure: SimilarityMeasure::Dot,
    };
    let result = evaluate(&bundle, EvalInput::Config(&cfg_sim)).unwrap();
    assert!(result.score >= 0.0 && result.score <= 1.0);
}

#[test]
fn mixed_bundle_orders_and_labels_adversarial_tail() {
    let mut cfg = base_config(
        KindSpec::MixedDatasets {
            adversarial_train: 12,
            adversarial_test: 8,
            adversarial_label: 1,
            shift: 12.0,
        },
        91,
    );
    cfg.data.n = 150;
    let bundle = generate::<f64>(&cfg).unwrap();
    assert_eq!(bundle.train_data.len(), 162);
    assert_eq!(bundle.record.adversarial_idx, (150..162).collect::<Vec<_>>());
    for &i in &bundle.record.adversarial_idx {
        assert_eq!(bundle.train_data.labels()[i], 1);
    }
    assert_eq!(bundle.test_data.len(), 8);
}
