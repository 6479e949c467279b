//! Bundle directory layout, content hashing, and schema versioning.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{BenchmarkKind, GenerateConfig};

/// Bumped whenever the on-disk layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

/// Bundle metadata: enough to verify integrity and to regenerate the bundle
/// bit-identically (timestamps aside) when it was produced by `generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: BenchmarkKind,
    /// Present for generated bundles; regeneration reproduces the bundle.
    pub generate_config: Option<GenerateConfig>,
    pub master_seed: Option<u64>,
    /// Derived sub-seeds, by component tag.
    pub seeds: BTreeMap<String, u64>,
    /// sha256 hex per bundle file, keyed by path relative to the bundle dir.
    pub hashes: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(kind: BenchmarkKind) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            kind,
            generate_config: None,
            master_seed: None,
            seeds: BTreeMap::new(),
            hashes: BTreeMap::new(),
            warnings: Vec::new(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn check_schema(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                found: self.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes one bundle file and records its hash in the manifest.
pub(super) fn write_hashed(
    dir: &Path,
    rel: &str,
    contents: &str,
    manifest: &mut Manifest,
) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, contents)?;
    manifest.hashes.insert(rel.to_string(), sha256_hex(contents.as_bytes()));
    Ok(())
}

/// Reads one bundle file and verifies it against the manifest hash.
pub(super) fn read_verified(dir: &Path, rel: &str, manifest: &Manifest) -> Result<String> {
    let expected = manifest
        .hashes
        .get(rel)
        .ok_or_else(|| Error::Integrity(format!("manifest lists no hash for {rel}")))?;
    let bytes = std::fs::read(dir.join(rel))
        .map_err(|e| Error::Integrity(format!("missing bundle file {rel}: {e}")))?;
    let actual = sha256_hex(&bytes);
    if &actual != expected {
        return Err(Error::Integrity(format!(
            "hash mismatch for {rel}: manifest says {expected}, file hashes to {actual}"
        )));
    }
    String::from_utf8(bytes)
        .map_err(|e| Error::Integrity(format!("bundle file {rel} is not valid UTF-8: {e}")))
}
