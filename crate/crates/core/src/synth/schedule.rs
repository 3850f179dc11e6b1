use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{Real, Tensor};

/// Signal coefficients `β[1..=T]`; the noised sample is
/// `x·√β[t] + ε·√(1−β[t])`, so a decreasing schedule adds noise with `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::config(
                "synth.steps",
                "need at least 2 diffusion steps",
            ));
        }
        let beta = (0..steps)
            .map(|i| start + (end - start) * i as f64 / (steps - 1) as f64)
            .collect();
        let s = Self { beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return Err(Error::config(
                "synth.beta",
                format!("value {b} outside (0, 1]"),
            ));
        }
        let inc = self.beta.windows(2).all(|w| w[1] > w[0]);
        let dec = self.beta.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return Err(Error::config(
                "synth.beta",
                "schedule must be strictly monotone",
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `β[t]` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.beta.len() {
            return Err(Error::invalid(
                "noising",
                format!("step {t} outside 1..={}", self.beta.len()),
            ));
        }
        Ok(self.beta[t - 1])
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(50, 0.999, 0.02).expect("default schedule is valid")
    }
}

/// Noise `x` at step `t` with `ε` drawn from `rng`. Returns `(x̃, ε)`.
pub fn noising_with<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let b = schedule.beta(t)?;
    let eps: Vec<T> = (0..x.numel())
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let (sb, sn) = (T::of(b.sqrt()), T::of((1.0 - b).sqrt()));
    let noisy = x
        .data()
        .iter()
        .zip(&eps)
        .map(|(&xv, &e)| xv * sb + e * sn)
        .collect();
    Ok((
        Tensor::new(x.shape().to_vec(), noisy)?,
        Tensor::new(x.shape().to_vec(), eps)?,
    ))
}

/// Seeded form of [`noising_with`].
pub fn noising<T: Real>(
    x: &Tensor<T>,
    t: usize,
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    use rand::SeedableRng;
    noising_with(
        x,
        t,
        schedule,
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed),
    )
}

/// Mean absolute reconstruction error.
pub fn l_rec(reconstruction: &[f64], target: &[f64]) -> Result<f64> {
    if reconstruction.len() != target.len() || target.is_empty() {
        return Err(Error::shape(
            "l_rec",
            "length",
            target.len(),
            reconstruction.len(),
        ));
    }
    Ok(reconstruction
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / target.len() as f64)
}
