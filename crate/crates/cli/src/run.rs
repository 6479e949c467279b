//! Command implementations.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tdabench_core::attrib::ExplainerConfig;
use tdabench_core::bench::{self, EvalInput, GenerateConfig};
use tdabench_core::{AttributionMatrix, BenchmarkBundle, Error, Result};

use crate::report::{self, BundleInfo, ReportEntry};

/// Reads and parses a JSON config file, mapping failures to configuration
/// errors that name the file.
fn read_json_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
}

pub fn generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: GenerateConfig = read_json_config(config)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    let bundle = bench::generate::<f64>(&cfg)?;
    bench::save(&bundle, out)?;
    println!(
        "bundle {} written to {} (train={}, test={}, checkpoints={})",
        bundle.kind().as_str(),
        out.display(),
        bundle.train_data.len(),
        bundle.test_data.len(),
        bundle.checkpoints.len(),
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Bundle directories to evaluate, merged with any `--bundle` flags.
    #[serde(default)]
    pub bundles: Vec<PathBuf>,
    /// Bundles to generate on the fly before evaluating.
    #[serde(default)]
    pub generate: Vec<GenerateConfig>,
    /// Explainer configurations, or `{"method": "precomputed", "params":
    /// {"path": ...}}` entries pointing at saved attribution matrices.
    pub explainers: Vec<serde_json::Value>,
    #[serde(default = "default_repeat")]
    pub repeat: usize,
    #[serde(default = "default_stride")]
    pub seed_stride: u64,
    /// Report formats to emit, a subset of {"json", "csv"}.
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_repeat() -> usize {
    1
}
fn default_stride() -> u64 {
    1
}
fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into()]
}

enum ExplainerEntry {
    Config(ExplainerConfig),
    Precomputed { label: String, matrix: AttributionMatrix },
}

impl ExplainerEntry {
    fn label(&self) -> String {
        match self {
            ExplainerEntry::Config(cfg) => cfg.label(),
            ExplainerEntry::Precomputed { label, .. } => label.clone(),
        }
    }
}

fn parse_explainer_entry(value: &serde_json::Value) -> Result<ExplainerEntry> {
    if value.get("method").and_then(|m| m.as_str()) == Some("precomputed") {
        let path = value
            .get("params")
            .and_then(|p| p.get("path"))
            .and_then(|p| p.as_str())
            .ok_or_else(|| {
                Error::config("precomputed explainer entry needs params.path")
            })?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read attribution file {path}: {e}")))?;
        let matrix = AttributionMatrix::from_json(&text)?;
        let stem = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "attributions".into());
        Ok(ExplainerEntry::Precomputed {
            label: format!("precomputed_{stem}"),
            matrix,
        })
    } else {
        let cfg: ExplainerConfig = serde_json::from_value(value.clone())
            .map_err(|e| Error::Config(format!("invalid explainer entry: {e}")))?;
        cfg.validate()?;
        Ok(ExplainerEntry::Config(cfg))
    }
}

pub fn evaluate(
    bundle_flags: &[PathBuf],
    config: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let run_cfg: RunConfig = read_json_config(config)?;
    if run_cfg.explainers.is_empty() {
        return Err(Error::config("run config lists no explainers"));
    }
    for format in &run_cfg.formats {
        if format != "json" && format != "csv" {
            return Err(Error::Config(format!(
                "unknown report format {format:?} (expected \"json\" or \"csv\")"
            )));
        }
    }
    let entries: Vec<ExplainerEntry> = run_cfg
        .explainers
        .iter()
        .map(parse_explainer_entry)
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(out)?;
    let mut bundle_dirs: Vec<PathBuf> = bundle_flags.to_vec();
    bundle_dirs.extend(run_cfg.bundles.iter().cloned());
    for (i, gen_cfg) in run_cfg.generate.iter().enumerate() {
        let dir = out
            .join("bundles")
            .join(format!("{}_{i}", gen_cfg.benchmark.kind().as_str()));
        let bundle = bench::generate::<f64>(gen_cfg)?;
        bench::save(&bundle, &dir)?;
        bundle_dirs.push(dir);
    }
    if bundle_dirs.is_empty() {
        return Err(Error::config(
            "no bundles to evaluate: pass --bundle or list bundles/generate in the config",
        ));
    }

    let mut bundles: Vec<(PathBuf, BenchmarkBundle)> = Vec::new();
    for dir in &bundle_dirs {
        bundles.push((dir.clone(), bench::load::<f64>(dir)?));
    }

    let seed_base = seed.unwrap_or(0);
    let labels = report::unique_labels(&entries.iter().map(ExplainerEntry::label).collect::<Vec<_>>());

    let mut results: Vec<ReportEntry> = Vec::new();
    let mut curves: Vec<(String, bench::CurveData)> = Vec::new();
    let run_cfg_value = serde_json::to_value(&run_cfg)?;

    for (dir, bundle) in &bundles {
        for (entry, label) in entries.iter().zip(&labels) {
            for repeat in 0..run_cfg.repeat.max(1) {
                let offset = seed_base.wrapping_add(repeat as u64 * run_cfg.seed_stride);
                let (input_cfg, resolved): (EvalInput<'_, f64>, serde_json::Value);
                let shifted;
                match entry {
                    ExplainerEntry::Config(cfg) => {
                        shifted = cfg.with_seed_offset(offset);
                        resolved = serde_json::to_value(&shifted)?;
                        input_cfg = EvalInput::Config(&shifted);
                    }
                    ExplainerEntry::Precomputed { matrix, .. } => {
                        resolved = serde_json::json!({"method": "precomputed"});
                        input_cfg = EvalInput::Precomputed(matrix);
                    }
                }
                let outcome = bench::evaluate_with_curves(bundle, input_cfg);
                match outcome {
                    Ok((result, curve)) => {
                        if repeat == 0 {
                            if let Some(curve) = curve {
                                curves.push((
                                    format!("{}/{}", report::bundle_tag(dir, bundle), label),
                                    curve,
                                ));
                            }
                        }
                        results.push(ReportEntry {
                            bundle: dir.display().to_string(),
                            kind: bundle.kind().as_str().to_string(),
                            explainer: label.clone(),
                            explainer_config: resolved,
                            repeat,
                            seed_offset: offset,
                            result,
                        });
                    }
                    Err(err) => {
                        // flush what finished before propagating the failure
                        report::write_all(
                            out,
                            &run_cfg_value,
                            &run_cfg.formats,
                            &results,
                            &curves,
                            &bundle_infos(&bundles),
                            true,
                        )?;
                        return Err(err);
                    }
                }
            }
        }
    }

    report::write_all(
        out,
        &run_cfg_value,
        &run_cfg.formats,
        &results,
        &curves,
        &bundle_infos(&bundles),
        false,
    )?;
    println!(
        "evaluated {} explainer(s) x {} bundle(s) x {} repeat(s) -> {}",
        entries.len(),
        bundles.len(),
        run_cfg.repeat.max(1),
        out.display()
    );
    Ok(())
}

fn bundle_infos(bundles: &[(PathBuf, BenchmarkBundle)]) -> Vec<BundleInfo> {
    bundles
        .iter()
        .map(|(dir, bundle)| BundleInfo {
            path: dir.display().to_string(),
            kind: bundle.kind().as_str().to_string(),
            master_seed: bundle.manifest.master_seed,
            hashes: bundle.manifest.hashes.clone(),
        })
        .collect()
}

pub fn attribute(bundle_dir: &Path, explainer: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let bundle = bench::load::<f64>(bundle_dir)?;
    let cfg_text = std::fs::read_to_string(explainer)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", explainer.display())))?;
    let cfg = ExplainerConfig::from_json(&cfg_text)
        .map_err(|e| Error::Config(format!("invalid explainer config: {e}")))?;
    if cfg.needs_checkpoints() && bundle.checkpoints.is_empty() {
        return Err(Error::incompatible(
            "tracin explainer requires checkpoints, but the bundle has none",
        ));
    }
    let cfg = cfg.with_seed_offset(seed.unwrap_or(0));

    let plan = bench::eval_plan(&bundle)?;
    if plan.rows.is_empty() {
        return Err(Error::metric(
            "the bundle's evaluation batch is empty (no test samples survive its filter)",
        ));
    }
    let explainer = tdabench_core::attrib::build_explainer(
        &cfg,
        &bundle.model,
        &bundle.train_data,
        Some(&bundle.checkpoints),
    )?;
    let matrix = explainer.explain(&plan.inputs, &plan.targets)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, matrix.to_json()?)?;
    println!(
        "wrote {} rows x {} columns of {} attributions to {}",
        matrix.num_test(),
        matrix.num_train(),
        matrix.method_name,
        out.display()
    );
    Ok(())
}
