//! Parameter counting, memory estimates and inference latency measurement.

mod latency;
mod stream;

pub use latency::{
    default_deadline_ms, histogram, latency_csv, latency_run, percentile, HostDescriptor,
    LatencyConfig, LatencyReport,
};
pub use stream::{stream_replay, stream_step, SegmentRecord, StreamReport};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::msti::Classifier;
use crate::substrate::{Mode, Real, Session, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub model: String,
    /// Trainable parameters.
    pub params: usize,
    /// Bytes of all stored tensors (parameters and running statistics).
    pub param_bytes: usize,
    /// Bytes of every intermediate value of one single-segment forward pass.
    pub activation_bytes: usize,
    /// Process resident set size when measured; informational.
    pub rss_bytes: Option<u64>,
}

pub fn count_params<T: Real, M: Classifier<T> + ?Sized>(model: &M) -> Result<ComplexityReport> {
    let (c, w) = model.input_shape();
    let mut s = Session::new(model.store(), Mode::Eval);
    let x = s.graph.constant(Tensor::zeros(vec![1, c, w]));
    model.forward(&mut s, x)?;
    let elem = std::mem::size_of::<T>();
    Ok(ComplexityReport {
        model: model.name(),
        params: model.store().num_params(),
        param_bytes: model
            .store()
            .entries()
            .iter()
            .map(|e| e.tensor.numel())
            .sum::<usize>()
            * elem,
        activation_bytes: s.graph.activation_bytes(),
        rss_bytes: resident_bytes(),
    })
}

/// `VmRSS` from `/proc/self/status`, where available.
pub fn resident_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = text.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
