use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{Graph, Real, Tensor, Var};

use super::weights::LossWeights;

/// Focal and smoothing constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    pub smoothing: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            smoothing: 0.1,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("train.focal.alpha", "must lie in [0, 1]"));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::config("train.focal.gamma", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::config("train.focal.smoothing", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `[B, K]` one-hot (or smoothed) target rows.
pub fn target_matrix<T: Real>(targets: &[usize], k: usize, smoothing: f64) -> Result<Tensor<T>> {
    let mut data = vec![T::of(smoothing / k as f64); targets.len() * k];
    for (i, &y) in targets.iter().enumerate() {
        if y >= k {
            return Err(Error::invalid(
                "loss",
                format!("target id {y} out of range for {k} classes"),
            ));
        }
        data[i * k + y] = T::of(1.0 - smoothing + smoothing / k as f64);
    }
    Tensor::new(vec![targets.len(), k], data)
}

fn check_probs<T: Real>(g: &Graph<T>, probs: Var, targets: &[usize]) -> Result<usize> {
    let s = g.shape(probs);
    if s.len() != 2 || s[0] != targets.len() {
        return Err(Error::shape(
            "loss",
            "probabilities",
            format!("[{}, K]", targets.len()),
            format!("{s:?}"),
        ));
    }
    Ok(s[1])
}

/// Batch-mean cross entropy `-log q(y)`.
pub fn loss_ce<T: Real>(g: &mut Graph<T>, probs: Var, targets: &[usize]) -> Result<Var> {
    let k = check_probs(g, probs, targets)?;
    let onehot = g.constant(target_matrix(targets, k, 0.0)?);
    let lp = g.log(probs);
    let picked = g.mul(lp, onehot)?;
    let per = g.sum_axis(picked, 1)?;
    let m = g.mean(per);
    Ok(g.scale(m, -1.0))
}

/// Batch-mean focal loss `-α (1 - p_t)^γ log p_t`.
pub fn loss_focal<T: Real>(
    g: &mut Graph<T>,
    probs: Var,
    targets: &[usize],
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    let k = check_probs(g, probs, targets)?;
    let onehot = g.constant(target_matrix(targets, k, 0.0)?);
    let picked = g.mul(probs, onehot)?;
    let pt = g.sum_axis(picked, 1)?;
    let one_minus = g.scale(pt, -1.0);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let modulating = g.powf(one_minus, gamma);
    let lp = g.log(pt);
    let per = g.mul(modulating, lp)?;
    let m = g.mean(per);
    Ok(g.scale(m, -alpha))
}

/// Batch-mean label-smoothed NLL with target weights `(1-ε)δ + ε/K`.
pub fn loss_slnll<T: Real>(
    g: &mut Graph<T>,
    probs: Var,
    targets: &[usize],
    smoothing: f64,
) -> Result<Var> {
    let k = check_probs(g, probs, targets)?;
    let w = g.constant(target_matrix(targets, k, smoothing)?);
    let lp = g.log(probs);
    let weighted = g.mul(lp, w)?;
    let per = g.sum_axis(weighted, 1)?;
    let m = g.mean(per);
    Ok(g.scale(m, -1.0))
}

/// `ω0·sl + ω1·fl + ω2·ce`.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    sl: Var,
    fl: Var,
    ce: Var,
    w: &LossWeights,
) -> Result<Var> {
    let a = g.scale(sl, w.w[0]);
    let b = g.scale(fl, w.w[1]);
    let c = g.scale(ce, w.w[2]);
    let ab = g.add(a, b)?;
    g.add(ab, c)
}

/// Component values of one batch, in the same order as the trace columns.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    pub fl: f64,
    pub sl: f64,
    pub total: f64,
}

/// Plain-value losses for row-stochastic `probs` (no graph).
pub fn loss_values(
    probs: &[f64],
    k: usize,
    targets: &[usize],
    fp: &FocalParams,
    w: &LossWeights,
) -> Result<LossParts> {
    if probs.len() != targets.len() * k {
        return Err(Error::shape(
            "loss",
            "probabilities",
            targets.len() * k,
            probs.len(),
        ));
    }
    let n = targets.len().max(1) as f64;
    let mut parts = LossParts::default();
    let log = |p: f64| p.max(crate::substrate::LOG_FLOOR).ln();
    for (row, &y) in probs.chunks(k).zip(targets) {
        if y >= k {
            return Err(Error::invalid(
                "loss",
                format!("target id {y} out of range for {k} classes"),
            ));
        }
        let pt = row[y];
        parts.ce -= log(pt);
        parts.fl -= fp.alpha * (1.0 - pt).powf(fp.gamma) * log(pt);
        for (j, &p) in row.iter().enumerate() {
            let t = if j == y { 1.0 - fp.smoothing } else { 0.0 } + fp.smoothing / k as f64;
            parts.sl -= t * log(p);
        }
    }
    parts.ce /= n;
    parts.fl /= n;
    parts.sl /= n;
    parts.total = w.w[0] * parts.sl + w.w[1] * parts.fl + w.w[2] * parts.ce;
    Ok(parts)
}
