use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::Tensor;

use super::dataset::{SplitFractions, SplitPolicy, WindowedDataset};
use super::SensorWindow;

/// Sinusoid-per-class toy data standing in for real recordings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub channels: usize,
    pub window: usize,
    /// Window count per class; length must equal `classes`.
    pub per_class: Vec<usize>,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_subjects")]
    pub subjects: u32,
}

fn default_noise() -> f64 {
    0.3
}

fn default_subjects() -> u32 {
    8
}

impl SyntheticSpec {
    pub fn balanced(
        classes: usize,
        channels: usize,
        window: usize,
        per_class: usize,
        seed: u64,
    ) -> Self {
        Self {
            classes,
            channels,
            window,
            per_class: vec![per_class; classes],
            seed,
            noise_std: default_noise(),
            subjects: default_subjects(),
        }
    }

    /// Cycles per window for class `k`.
    pub fn frequency(k: usize) -> f64 {
        1.0 + k as f64
    }

    /// Constant baseline of channel `c`, shared by all classes.
    pub fn offset(c: usize) -> f64 {
        1.0 + 0.5 * c as f64
    }
}

/// Class `k`, channel `c`: `offset(c) + sin(2π f_k t / W + φ) + N(0, σ²)`
/// with a random phase φ per window and channel.
pub fn make_synthetic_dataset(
    spec: &SyntheticSpec,
    policy: SplitPolicy,
    fractions: SplitFractions,
) -> Result<WindowedDataset> {
    if spec.per_class.len() != spec.classes {
        return Err(Error::config(
            "data.synthetic.per_class",
            format!(
                "has {} entries for {} classes",
                spec.per_class.len(),
                spec.classes
            ),
        ));
    }
    if spec.classes == 0 || spec.channels == 0 || spec.window < 2 {
        return Err(Error::config(
            "data.synthetic",
            "classes, channels must be >= 1 and window >= 2",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::config("data.synthetic.noise_std", e.to_string()))?;
    let w = spec.window;
    let mut windows = Vec::with_capacity(spec.per_class.iter().sum());
    let mut serial = 0u32;
    for (k, &count) in spec.per_class.iter().enumerate() {
        let freq = SyntheticSpec::frequency(k);
        for _ in 0..count {
            let mut values = Vec::with_capacity(spec.channels * w);
            for c in 0..spec.channels {
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for t in 0..w {
                    let s = SyntheticSpec::offset(c)
                        + (std::f64::consts::TAU * freq * t as f64 / w as f64 + phase).sin()
                        + noise.sample(&mut rng);
                    values.push(s as f32);
                }
            }
            windows.push(SensorWindow {
                values: Tensor::new(vec![spec.channels, w], values)?,
                label: k,
                subject: serial % spec.subjects.max(1),
                t_start: 0,
                synthetic: false,
            });
            serial += 1;
        }
    }
    let names = (0..spec.classes).map(|k| format!("class{k}")).collect();
    WindowedDataset::new(windows, spec.classes, names, policy, fractions, spec.seed)
}
