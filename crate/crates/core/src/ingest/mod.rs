//! Raw sensor logs to labelled, normalized, split windows.

mod cache;
mod dataset;
mod synthetic;
mod window;
mod wisdm;

pub use cache::{load_dataset, save_dataset, DatasetManifest};
pub use dataset::{Normalization, SplitFractions, SplitPolicy, Splits, WindowedDataset, STD_FLOOR};
pub use synthetic::{make_synthetic_dataset, SyntheticSpec};
pub use window::{window, window_count};
pub use wisdm::{
    load_generic_csv, load_wisdm_csv, parse_wisdm_record, LoadedStreams, WisdmRecord,
    WISDM_ACTIVITIES,
};

use crate::substrate::Tensor;

/// Continuous multichannel recording from one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorStream {
    pub subject: u32,
    pub channels: usize,
    /// Row-major `[len, channels]`.
    pub samples: Vec<f32>,
    /// Per-sample class id.
    pub labels: Vec<usize>,
}

impl SensorStream {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Fixed-length segment, `values` shaped `[channels, window]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorWindow {
    pub values: Tensor<f32>,
    pub label: usize,
    pub subject: u32,
    pub t_start: usize,
    pub synthetic: bool,
}
