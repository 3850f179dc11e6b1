use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::WindowedDataset;
use crate::msti::{argmax_rows, Classifier};
use crate::substrate::layers::BN_MOMENTUM;
use crate::substrate::{Mode, Real, Session};

use super::adam::{AdamConfig, AdamState};
use super::loss::{
    loss_ce, loss_focal, loss_slnll, loss_values, total_loss, FocalParams, LossParts,
};
use super::weights::{adapt_weights, LossWeights};

/// How the three loss terms are weighted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LossMode {
    /// Only cross entropy enters the graph; the other terms are logged.
    CeOnly,
    Fixed {
        weights: [f64; 3],
    },
    /// Weights re-derived from accuracy at the end of each epoch.
    Adaptive {
        tau: f64,
        initial: [f64; 3],
    },
}

impl LossMode {
    pub fn adaptive(tau: f64) -> Self {
        LossMode::Adaptive {
            tau,
            initial: LossWeights::uniform().w,
        }
    }
}

/// Accuracy fed to the adaptive weight update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccSource {
    Train,
    Val,
}

/// Which training windows an epoch iterates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Real,
    Synthetic,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossMode,
    pub focal: FocalParams,
    pub acc_source: AccSource,
    pub data: DataSource,
    pub seed: u64,
    /// Restore the parameters of the best validation epoch on return.
    pub restore_best: bool,
}

impl FitSchedule {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            adam: AdamConfig::with_lr(lr),
            loss: LossMode::adaptive(0.5),
            focal: FocalParams::default(),
            acc_source: AccSource::Train,
            data: DataSource::Real,
            seed,
            restore_best: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return Err(Error::config(
                "train.lr",
                "must be a positive finite number",
            ));
        }
        if let LossMode::Adaptive { tau, .. } = self.loss {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::config("train.tau", "must lie in [0, 1]"));
            }
        }
        self.focal.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_fl: f64,
    pub loss_sl: f64,
    pub loss_total: f64,
    /// Weights in effect during this epoch.
    pub omega: [f64; 3],
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub steps: u64,
    pub train_windows: usize,
}

pub const TRACE_HEADER: &str =
    "epoch,loss_ce,loss_fl,loss_sl,loss_total,omega0,omega1,omega2,train_acc,val_acc";

pub fn trace_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.loss_ce,
            r.loss_fl,
            r.loss_sl,
            r.loss_total,
            r.omega[0],
            r.omega[1],
            r.omega[2],
            r.train_acc,
            r.val_acc
        );
    }
    s
}

/// Eval-mode predictions over `indices`, in order.
pub fn predict_indices<T: Real, M: Classifier<T> + ?Sized>(
    model: &M,
    data: &WindowedDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut preds = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = data.batch::<T>(chunk);
        preds.extend(model.predict(x)?);
        targets.extend(y);
    }
    Ok((preds, targets))
}

pub fn accuracy(preds: &[usize], targets: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(targets).filter(|(p, t)| p == t).count() as f64 / preds.len() as f64
}

fn training_indices(data: &WindowedDataset, source: DataSource) -> Vec<usize> {
    data.splits
        .train
        .iter()
        .copied()
        .filter(|&i| match source {
            DataSource::Real => !data.windows[i].synthetic,
            DataSource::Synthetic => data.windows[i].synthetic,
            DataSource::Mixed => true,
        })
        .collect()
}

/// Mini-batch training with a fresh optimizer. Unless `restore_best` is off,
/// the parameters of the epoch with the best validation accuracy are
/// restored into `model` on return.
pub fn fit<T: Real, M: Classifier<T> + ?Sized>(
    model: &mut M,
    data: &WindowedDataset,
    sched: &FitSchedule,
) -> Result<FitReport> {
    sched.validate()?;
    let train = training_indices(data, sched.data);
    if train.is_empty() {
        return Err(Error::Empty(
            format!("{:?} training split", sched.data).to_lowercase(),
        ));
    }
    if data.splits.val.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    let k = model.num_classes();
    let mut adam = AdamState::new(model.store(), sched.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut weights = match sched.loss {
        LossMode::CeOnly => LossWeights::ce_only(),
        LossMode::Fixed { weights } => LossWeights::fixed(weights),
        LossMode::Adaptive { initial, .. } => LossWeights::fixed(initial),
    };
    let mut order = train.clone();
    let mut records = Vec::with_capacity(sched.epochs);
    let mut best: Option<(usize, f64, crate::substrate::ParamStore<T>)> = None;

    for epoch in 1..=sched.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        let mut correct = 0usize;
        for chunk in order.chunks(sched.batch_size) {
            let (x, y) = data.batch::<T>(chunk);
            let (parts, preds, grads, bn) = {
                let mut s = Session::new(model.store(), Mode::Train);
                let xv = s.graph.constant(x);
                let logits = model.forward(&mut s, xv)?;
                let probs = s.graph.softmax(logits, 1)?;
                let ce = loss_ce(&mut s.graph, probs, &y)?;
                let loss = match sched.loss {
                    LossMode::CeOnly => ce,
                    _ => {
                        let sl = loss_slnll(&mut s.graph, probs, &y, sched.focal.smoothing)?;
                        let fl = loss_focal(
                            &mut s.graph,
                            probs,
                            &y,
                            sched.focal.alpha,
                            sched.focal.gamma,
                        )?;
                        total_loss(&mut s.graph, sl, fl, ce, &weights)?
                    }
                };
                s.graph
                    .value(loss)
                    .check_finite(&format!("training loss at epoch {epoch}"))?;
                let p = s.graph.value(probs).to_f64_vec();
                let parts = loss_values(&p, k, &y, &sched.focal, &weights)?;
                let preds = argmax_rows(s.graph.value(logits));
                let grads = s.backward(loss)?;
                (parts, preds, grads, s.take_bn_updates())
            };
            adam.step(model.store_mut(), &grads)?;
            model.store_mut().apply_bn_updates(&bn, BN_MOMENTUM);
            let n = chunk.len() as f64;
            sums.ce += parts.ce * n;
            sums.fl += parts.fl * n;
            sums.sl += parts.sl * n;
            sums.total += parts.total * n;
            correct += preds.iter().zip(&y).filter(|(p, t)| p == t).count();
        }
        let n = order.len() as f64;
        let train_acc = correct as f64 / n;
        let (vp, vt) = predict_indices(model, data, &data.splits.val, sched.batch_size)?;
        let val_acc = accuracy(&vp, &vt);
        let rec = EpochRecord {
            epoch,
            loss_ce: sums.ce / n,
            loss_fl: sums.fl / n,
            loss_sl: sums.sl / n,
            loss_total: sums.total / n,
            omega: weights.w,
            train_acc,
            val_acc,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4} train_acc {:.4} val_acc {:.4} omega {:?}",
            sched.epochs,
            rec.loss_total,
            train_acc,
            val_acc,
            weights.w
        );
        records.push(rec);
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, model.store().clone()));
        }
        if let LossMode::Adaptive { tau, .. } = sched.loss {
            let acc = match sched.acc_source {
                AccSource::Train => train_acc,
                AccSource::Val => val_acc,
            };
            weights = adapt_weights(&weights, acc, tau);
        }
    }
    let (best_epoch, best_val_acc, store) = best.expect("at least one epoch");
    if sched.restore_best {
        *model.store_mut() = store;
    }
    Ok(FitReport {
        records,
        best_epoch,
        best_val_acc,
        steps: adam.t,
        train_windows: train.len(),
    })
}
