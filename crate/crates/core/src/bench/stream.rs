use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{window_count, Normalization, SensorStream};
use crate::msti::{argmax_rows, Classifier};
use crate::substrate::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: usize,
    pub start: usize,
    pub ms: f64,
    pub missed: bool,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub window: usize,
    pub step: usize,
    pub deadline_ms: f64,
    pub segments: Vec<SegmentRecord>,
    /// Fraction of segments finishing within the deadline (1 for an empty trace).
    pub met_fraction: f64,
}

/// Stream step of 5% of the window, at least one sample.
pub fn stream_step(window: usize) -> usize {
    ((0.05 * window as f64).round() as usize).max(1)
}

/// Replays `stream` as a live feed: one segment every `step` samples, each
/// classified and timed against `deadline_ms` (the step duration). Segment
/// preparation is untimed.
pub fn stream_replay<T: Real, M: Classifier<T> + ?Sized>(
    model: &M,
    stream: &SensorStream,
    norm: Option<&Normalization>,
    step: usize,
    deadline_ms: f64,
) -> Result<StreamReport> {
    let (c, w) = model.input_shape();
    if stream.channels != c {
        return Err(Error::shape(
            "stream_replay",
            "stream channels",
            c,
            stream.channels,
        ));
    }
    if step == 0 {
        return Err(Error::invalid("stream_replay", "step must be >= 1"));
    }
    let n = window_count(stream.len(), w, step);
    let mut segments = Vec::with_capacity(n);
    for index in 0..n {
        let start = index * step;
        let mut data = vec![T::zero(); c * w];
        for t in 0..w {
            for ch in 0..c {
                let mut v = stream.samples[(start + t) * c + ch] as f64;
                if let Some(nm) = norm {
                    v = (v - nm.mean[ch]) / nm.std[ch];
                }
                data[ch * w + t] = T::of(v);
            }
        }
        let x = Tensor::new(vec![1, c, w], data)?;
        let t0 = Instant::now();
        let logits = model.logits(x)?;
        let ms = t0.elapsed().as_secs_f64() * 1000.0;
        segments.push(SegmentRecord {
            index,
            start,
            ms,
            missed: ms > deadline_ms,
            predicted: argmax_rows(&logits)[0],
        });
    }
    let met = segments.iter().filter(|s| !s.missed).count();
    Ok(StreamReport {
        window: w,
        step,
        deadline_ms,
        met_fraction: if segments.is_empty() {
            1.0
        } else {
            met as f64 / segments.len() as f64
        },
        segments,
    })
}
