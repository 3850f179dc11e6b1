//! Checkpoint files: a TOML manifest naming every tensor with its shape and
//! byte offset, next to a little-endian `f32` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::params::{ParamKind, ParamStore};
use super::tensor::{Real, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub blob: String,
    pub blob_bytes: u64,
    pub entries: Vec<ManifestEntry>,
}

/// Hex SHA-256 prefix of a serialized configuration.
pub fn config_hash(config_text: &str) -> String {
    let digest = Sha256::digest(config_text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path.with_file_name(blob)
}

/// Writes `<stem>.toml` and `<stem>.bin` next to each other. `manifest_path`
/// is the `.toml` path.
pub fn save<T: Real>(
    store: &ParamStore<T>,
    config_hash: &str,
    manifest_path: &Path,
) -> Result<Manifest> {
    let blob_name = manifest_path
        .with_extension("bin")
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Checkpoint(format!("bad path {}", manifest_path.display())))?
        .to_string();
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(store.len());
    for e in store.entries() {
        entries.push(ManifestEntry {
            name: e.name.clone(),
            kind: e.kind,
            shape: e.tensor.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for &v in e.tensor.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        blob: blob_name.clone(),
        blob_bytes: blob.len() as u64,
        entries,
    };
    if let Some(dir) = manifest_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bp = blob_path(manifest_path, &blob_name);
    fs::write(&bp, &blob).map_err(|e| Error::io(&bp, e))?;
    fs::write(manifest_path, toml::to_string(&manifest)?)
        .map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(manifest_path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: Manifest = toml::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}

/// Loads values into `store`, which must already have the checkpoint's layout.
/// If `expected_hash` is given it must match the manifest.
pub fn load_into<T: Real>(
    store: &mut ParamStore<T>,
    manifest_path: &Path,
    expected_hash: Option<&str>,
) -> Result<Manifest> {
    let m = read_manifest(manifest_path)?;
    if let Some(h) = expected_hash {
        if h != m.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {} vs model {h}",
                m.config_hash
            )));
        }
    }
    let bp = blob_path(manifest_path, &m.blob);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    if blob.len() as u64 != m.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "blob is {} bytes, manifest says {}",
            blob.len(),
            m.blob_bytes
        )));
    }
    if m.entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entries, model has {}",
            m.entries.len(),
            store.len()
        )));
    }
    for entry in &m.entries {
        let id = store
            .find(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", entry.name)))?;
        if store.get(id).shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: checkpoint {:?}, model {:?}",
                entry.name,
                entry.shape,
                store.get(id).shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 4 * n;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| Error::Checkpoint(format!("{} runs past end of blob", entry.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        *store.get_mut(id) = Tensor::new(entry.shape.clone(), data)?;
    }
    Ok(m)
}
