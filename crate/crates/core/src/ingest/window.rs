use crate::error::{Error, Result};
use crate::substrate::Tensor;

use super::{SensorStream, SensorWindow};

/// Number of windows of `size` at stride `step` in a stream of `len` samples.
pub fn window_count(len: usize, size: usize, step: usize) -> usize {
    if size == 0 || step == 0 || len < size {
        0
    } else {
        (len - size) / step + 1
    }
}

/// Cuts `stream` into windows at offsets `0, step, 2*step, ...`, dropping the
/// short tail. Each window takes the majority label of its samples; windows
/// with a tied majority are dropped.
pub fn window(stream: &SensorStream, size: usize, step: usize) -> Result<Vec<SensorWindow>> {
    if size == 0 {
        return Err(Error::invalid("window", "size must be >= 1"));
    }
    if step == 0 || step > size {
        return Err(Error::invalid(
            "window",
            format!("step {step} must be in 1..={size}"),
        ));
    }
    let c = stream.channels;
    let n = window_count(stream.len(), size, step);
    let mut out = Vec::with_capacity(n);
    let mut votes = Vec::new();
    for w in 0..n {
        let start = w * step;
        let labels = &stream.labels[start..start + size];
        let Some(label) = majority(labels, &mut votes) else {
            continue;
        };
        let mut values = vec![0.0f32; c * size];
        for t in 0..size {
            for ch in 0..c {
                values[ch * size + t] = stream.samples[(start + t) * c + ch];
            }
        }
        out.push(SensorWindow {
            values: Tensor::new(vec![c, size], values)?,
            label,
            subject: stream.subject,
            t_start: start,
            synthetic: false,
        });
    }
    Ok(out)
}

fn majority(labels: &[usize], votes: &mut Vec<usize>) -> Option<usize> {
    votes.clear();
    for &l in labels {
        if l >= votes.len() {
            votes.resize(l + 1, 0);
        }
        votes[l] += 1;
    }
    let best = *votes.iter().max()?;
    let mut winners = votes.iter().enumerate().filter(|(_, &v)| v == best);
    let (label, _) = winners.next()?;
    winners.next().is_none().then_some(label)
}
