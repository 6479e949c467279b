//! Report assembly: report.json, scores.csv, curves.json.
//!
//! Reports embed the resolved run configuration and the manifest hashes of
//! every bundle, so a report alone identifies the experiment that produced
//! it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use tdabench_core::bench::CurveData;
use tdabench_core::metrics::MetricResult;
use tdabench_core::{BenchmarkBundle, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ReportEntry {
    pub bundle: String,
    pub kind: String,
    pub explainer: String,
    pub explainer_config: serde_json::Value,
    pub repeat: usize,
    pub seed_offset: u64,
    pub result: MetricResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct BundleInfo {
    pub path: String,
    pub kind: String,
    pub master_seed: Option<u64>,
    pub hashes: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Report<'a> {
    created_unix: u64,
    partial: bool,
    config: &'a serde_json::Value,
    bundles: &'a [BundleInfo],
    results: &'a [ReportEntry],
}

/// Disambiguates duplicate explainer labels by suffixing an index.
pub fn unique_labels(labels: &[String]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|label| {
            let count = seen.entry(label.clone()).or_insert(0);
            *count += 1;
            if *count == 1 {
                label.clone()
            } else {
                format!("{label}#{count}")
            }
        })
        .collect()
}

/// Column tag for a bundle: the kind, suffixed with the directory name when
/// several bundles share a kind.
pub fn bundle_tag(dir: &Path, bundle: &BenchmarkBundle) -> String {
    let stem = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{}@{stem}", bundle.kind().as_str())
}

pub fn write_all(
    out: &Path,
    config: &serde_json::Value,
    formats: &[String],
    results: &[ReportEntry],
    curves: &[(String, CurveData)],
    bundles: &[BundleInfo],
    partial: bool,
) -> Result<()> {
    if formats.iter().any(|f| f == "json") {
        let report = Report {
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            partial,
            config,
            bundles,
            results,
        };
        std::fs::write(
            out.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;

        let curve_map: BTreeMap<&str, &CurveData> =
            curves.iter().map(|(k, v)| (k.as_str(), v)).collect();
        std::fs::write(
            out.join("curves.json"),
            serde_json::to_string_pretty(&curve_map)?,
        )?;
    }
    if formats.iter().any(|f| f == "csv") {
        std::fs::write(out.join("scores.csv"), scores_csv(results))?;
    }
    Ok(())
}

/// One row per explainer, one column per bundle; cells hold the mean score
/// over repeats, empty when an (explainer, bundle) pair was not evaluated.
fn scores_csv(results: &[ReportEntry]) -> String {
    let mut explainers: Vec<String> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    for entry in results {
        if !explainers.contains(&entry.explainer) {
            explainers.push(entry.explainer.clone());
        }
        let column = column_key(entry);
        if !columns.contains(&column) {
            columns.push(column);
        }
    }

    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for entry in results {
        cells
            .entry((entry.explainer.clone(), column_key(entry)))
            .or_default()
            .push(entry.result.score);
    }

    let mut csv = String::from("explainer");
    for column in &columns {
        csv.push(',');
        csv.push_str(column);
    }
    csv.push('\n');
    for explainer in &explainers {
        csv.push_str(explainer);
        for column in &columns {
            csv.push(',');
            if let Some(scores) = cells.get(&(explainer.clone(), column.clone())) {
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                csv.push_str(&format!("{mean}"));
            }
        }
        csv.push('\n');
    }
    csv
}

fn column_key(entry: &ReportEntry) -> String {
    let stem = Path::new(&entry.bundle)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{}@{stem}", entry.kind)
}
