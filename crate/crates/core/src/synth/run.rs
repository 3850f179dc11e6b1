use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SensorWindow, WindowedDataset};
use crate::substrate::{Mode, Real, Session, Tensor};
use crate::train::{AdamConfig, AdamState};

use super::denoiser::Denoiser;
use super::features::{extract_features, fused_batch, StatFeatures};
use super::schedule::{noising_with, DiffusionSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 16,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// Normalized `[C, W]` view of window `i`.
fn normalized<T: Real>(data: &WindowedDataset, i: usize) -> Tensor<T> {
    let (x, _) = data.batch::<T>(&[i]);
    x.select0(0)
}

/// Trains `model` to reconstruct clean (normalized) real train windows from
/// their noised versions and statistics. Returns `L_rec` per step.
pub fn pretrain<T: Real>(
    model: &mut Denoiser<T>,
    data: &WindowedDataset,
    schedule: &DiffusionSchedule,
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    schedule.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::config("synth.batch_size", "must be >= 1"));
    }
    let real: Vec<usize> = data
        .splits
        .train
        .iter()
        .copied()
        .filter(|&i| !data.windows[i].synthetic)
        .collect();
    if real.is_empty() {
        return Err(Error::Empty(
            "real training windows for diffusion pretraining".into(),
        ));
    }
    let clean: Vec<Tensor<T>> = real.iter().map(|&i| normalized(data, i)).collect();
    let feats = clean
        .iter()
        .map(extract_features)
        .collect::<Result<Vec<_>>>()?;
    let mut adam = AdamState::new(&model.store, AdamConfig::with_lr(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..clean.len()))
            .collect();
        let mut noisy = Vec::with_capacity(picks.len());
        let mut steps = Vec::with_capacity(picks.len());
        for &p in &picks {
            let t = rng.random_range(1..=schedule.steps());
            noisy.push(noising_with(&clean[p], t, schedule, &mut rng)?.0);
            steps.push(t);
        }
        let x = Tensor::stack(&picks.iter().map(|&p| clean[p].clone()).collect::<Vec<_>>())?;
        let f = fused_batch::<T>(&picks.iter().map(|&p| &feats[p]).collect::<Vec<_>>())?;
        let (loss_value, grads) = {
            let mut s = Session::new(&model.store, Mode::Train);
            let xn = s.graph.constant(Tensor::stack(&noisy)?);
            let fv = s.graph.constant(f);
            let target = s.graph.constant(x);
            let y = model.forward(&mut s, xn, fv, &steps)?;
            let d = s.graph.sub(y, target)?;
            let a = s.graph.abs(d);
            let loss = s.graph.mean(a);
            let value = s.graph.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("diffusion reconstruction loss at step {step}"),
                });
            }
            (value, s.backward(loss)?)
        };
        adam.step(&mut model.store, &grads)?;
        if step % 50 == 0 {
            log::debug!("pretrain step {step}: L_rec {loss_value:.5}");
        }
        trace.push(loss_value);
    }
    Ok(trace)
}

/// One sample per conditioning entry: denoise pure noise at step `T`, then
/// optionally re-noise and denoise `refine` more times at decreasing steps.
/// Sample `i` draws its noise from stream `i` of a generator seeded by
/// `seed`, so outputs do not depend on batch composition.
pub fn generate_batch<T: Real>(
    model: &Denoiser<T>,
    schedule: &DiffusionSchedule,
    conditioning: &[&StatFeatures],
    seed: u64,
    refine: usize,
) -> Result<Vec<Tensor<T>>> {
    if conditioning.is_empty() {
        return Ok(Vec::new());
    }
    let (c, w) = (model.config.channels, model.config.window);
    for f in conditioning {
        if f.channels() != c || f.window() != w {
            return Err(Error::shape(
                "generate",
                "conditioning features",
                format!("[{c}, {w}]"),
                format!("[{}, {}]", f.channels(), f.window()),
            ));
        }
    }
    let big_t = schedule.steps();
    let mut rngs: Vec<ChaCha8Rng> = (0..conditioning.len())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut x: Vec<Tensor<T>> = rngs
        .iter_mut()
        .map(|r| {
            Tensor::new(
                vec![c, w],
                (0..c * w)
                    .map(|_| T::of(r.sample::<f64, _>(StandardNormal)))
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    let feats = fused_batch::<T>(conditioning)?;
    let mut t = big_t;
    for round in 0..=refine {
        if round > 0 {
            t = (big_t * (refine + 1 - round) / (refine + 1)).max(1);
            for (xi, r) in x.iter_mut().zip(rngs.iter_mut()) {
                *xi = noising_with(xi, t, schedule, r)?.0;
            }
        }
        let mut s = Session::new(&model.store, Mode::Eval);
        let xv = s.graph.constant(Tensor::stack(&x)?);
        let fv = s.graph.constant(feats.clone());
        let y = model.forward(&mut s, xv, fv, &vec![t; x.len()])?;
        let out = s.graph.value(y);
        out.check_finite("generated windows")?;
        x = (0..x.len()).map(|i| out.select0(i)).collect();
    }
    Ok(x)
}

/// `count` normalized samples all conditioned on `features`.
pub fn generate<T: Real>(
    model: &Denoiser<T>,
    schedule: &DiffusionSchedule,
    features: &StatFeatures,
    count: usize,
    seed: u64,
    refine: usize,
) -> Result<Vec<Tensor<T>>> {
    let cond = vec![features; count];
    generate_batch(model, schedule, &cond, seed, refine)
}

/// Generates labeled windows for `class` in raw units. Each sample is
/// conditioned on the statistics of a randomly chosen real train window of
/// that class.
pub fn synthesize_class<T: Real>(
    model: &Denoiser<T>,
    schedule: &DiffusionSchedule,
    data: &WindowedDataset,
    class: usize,
    count: usize,
    seed: u64,
    refine: usize,
) -> Result<Vec<SensorWindow>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let pool: Vec<usize> = data
        .splits
        .train
        .iter()
        .copied()
        .filter(|&i| !data.windows[i].synthetic && data.windows[i].label == class)
        .collect();
    if pool.is_empty() {
        return Err(Error::Empty(format!(
            "real training windows of class {class}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000 ^ class as u64);
    let picks: Vec<usize> = (0..count)
        .map(|_| *pool.choose(&mut rng).expect("non-empty"))
        .collect();
    let feats = picks
        .iter()
        .map(|&i| extract_features(&normalized::<T>(data, i)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&StatFeatures> = feats.iter().collect();
    let out = generate_batch(
        model,
        schedule,
        &refs,
        seed.wrapping_add(class as u64),
        refine,
    )?;
    let (c, w) = (data.channels(), data.window_len());
    Ok(out
        .into_iter()
        .zip(&picks)
        .map(|(x, &src)| {
            let mut raw = Vec::with_capacity(c * w);
            for ch in 0..c {
                let (m, sd) = (data.normalization.mean[ch], data.normalization.std[ch]);
                raw.extend(
                    x.data()[ch * w..(ch + 1) * w]
                        .iter()
                        .map(|v| (v.as_f64() * sd + m) as f32),
                );
            }
            SensorWindow {
                values: Tensor::new(vec![c, w], raw).expect("window shape"),
                label: class,
                subject: data.windows[src].subject,
                t_start: 0,
                synthetic: true,
            }
        })
        .collect())
}

/// Per-class counts needed to lift every class to the largest real class
/// in the train split.
pub fn balance_plan(data: &WindowedDataset) -> Vec<usize> {
    let real: Vec<usize> = data
        .splits
        .train
        .iter()
        .copied()
        .filter(|&i| !data.windows[i].synthetic)
        .collect();
    let counts = data.class_counts_in(&real);
    let max = counts.iter().copied().max().unwrap_or(0);
    counts
        .iter()
        .map(|&n| if n == 0 { 0 } else { max - n })
        .collect()
}

/// Generates `per_class[k]` windows of each class (synthetic-only, same order
/// as the classes).
pub fn synthesize<T: Real>(
    model: &Denoiser<T>,
    schedule: &DiffusionSchedule,
    data: &WindowedDataset,
    per_class: &[usize],
    seed: u64,
    refine: usize,
) -> Result<Vec<SensorWindow>> {
    let mut out = Vec::new();
    for (k, &n) in per_class.iter().enumerate() {
        out.extend(synthesize_class(model, schedule, data, k, n, seed, refine)?);
    }
    Ok(out)
}
