//! Windowed-dataset cache: TOML manifest plus a little-endian `f32` blob
//! holding every window's `[C, W]` values back to back.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::Tensor;

use super::dataset::{Normalization, Splits, WindowedDataset};
use super::SensorWindow;

pub const CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub num_windows: usize,
    pub channels: usize,
    pub window: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub blob: String,
    pub normalization: Normalization,
    pub splits: Splits,
    pub labels: Vec<usize>,
    pub subjects: Vec<u32>,
    pub t_start: Vec<usize>,
    pub synthetic: Vec<bool>,
}

/// Writes `manifest_path` and a sibling `.bin` blob.
pub fn save_dataset(d: &WindowedDataset, manifest_path: &Path) -> Result<DatasetManifest> {
    let blob_name = manifest_path
        .with_extension("bin")
        .file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| {
            Error::invalid(
                "save_dataset",
                format!("bad path {}", manifest_path.display()),
            )
        })?;
    let mut blob = Vec::with_capacity(d.len() * d.channels() * d.window_len() * 4);
    for w in &d.windows {
        for v in w.values.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let m = DatasetManifest {
        format_version: CACHE_VERSION,
        num_windows: d.len(),
        channels: d.channels(),
        window: d.window_len(),
        num_classes: d.num_classes,
        class_names: d.class_names.clone(),
        class_counts: d.class_counts(),
        blob: blob_name.clone(),
        normalization: d.normalization.clone(),
        splits: d.splits.clone(),
        labels: d.windows.iter().map(|w| w.label).collect(),
        subjects: d.windows.iter().map(|w| w.subject).collect(),
        t_start: d.windows.iter().map(|w| w.t_start).collect(),
        synthetic: d.windows.iter().map(|w| w.synthetic).collect(),
    };
    if let Some(dir) = manifest_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bp = manifest_path.with_file_name(&blob_name);
    fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))?;
    fs::write(manifest_path, toml::to_string(&m)?).map_err(|e| Error::io(manifest_path, e))?;
    Ok(m)
}

pub fn load_dataset(manifest_path: &Path) -> Result<WindowedDataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: DatasetManifest = toml::from_str(&text)?;
    let bad = |msg: String| Error::Parse {
        path: manifest_path.to_path_buf(),
        msg,
    };
    if m.format_version != CACHE_VERSION {
        return Err(bad(format!(
            "unsupported cache version {}",
            m.format_version
        )));
    }
    let n = m.num_windows;
    if [
        m.labels.len(),
        m.subjects.len(),
        m.t_start.len(),
        m.synthetic.len(),
    ]
    .iter()
    .any(|&l| l != n)
    {
        return Err(bad("per-window arrays disagree with num_windows".into()));
    }
    let bp = manifest_path.with_file_name(&m.blob);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let per = m.channels * m.window;
    if blob.len() != n * per * 4 {
        return Err(bad(format!(
            "blob has {} bytes, expected {}",
            blob.len(),
            n * per * 4
        )));
    }
    let mut all = m
        .splits
        .train
        .iter()
        .chain(&m.splits.val)
        .chain(&m.splits.test)
        .copied()
        .collect::<Vec<_>>();
    all.sort_unstable();
    if all != (0..n).collect::<Vec<_>>() {
        return Err(bad("splits must be disjoint and cover every window".into()));
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let windows = (0..n)
        .map(|i| {
            Ok(SensorWindow {
                values: Tensor::new(
                    vec![m.channels, m.window],
                    floats[i * per..(i + 1) * per].to_vec(),
                )?,
                label: m.labels[i],
                subject: m.subjects[i],
                t_start: m.t_start[i],
                synthetic: m.synthetic[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(l) = m.labels.iter().find(|&&l| l >= m.num_classes) {
        return Err(bad(format!("label {l} outside 0..{}", m.num_classes)));
    }
    Ok(WindowedDataset {
        windows,
        splits: m.splits,
        num_classes: m.num_classes,
        class_names: m.class_names,
        normalization: m.normalization,
    })
}
