use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msti::Classifier;
use crate::par;
use crate::substrate::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostDescriptor {
    pub os: String,
    pub arch: String,
    pub logical_cores: usize,
    pub parallel_kernels: bool,
    pub kernel_threads: usize,
}

impl HostDescriptor {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
            parallel_kernels: par::is_parallel(),
            kernel_threads: par::threads(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyConfig {
    pub runs: usize,
    pub warmup: usize,
    pub deadline_ms: f64,
    /// Run the kernels on the calling thread only.
    #[serde(default)]
    pub sequential: bool,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            warmup: 10,
            deadline_ms: 200.0,
            sequential: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model: String,
    pub config_hash: String,
    pub durations_ms: Vec<f64>,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub warmup: usize,
    pub deadline_ms: f64,
    pub misses: usize,
    pub host: HostDescriptor,
}

/// Deadline equal to 5% of the window duration.
pub fn default_deadline_ms(window: usize, sample_rate_hz: f64) -> f64 {
    0.05 * window as f64 / sample_rate_hz * 1000.0
}

/// Nearest-rank percentile of `sorted` (ascending), `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `runs` single-segment forward passes after `warmup` untimed ones.
pub fn latency_run<T: Real, M: Classifier<T> + ?Sized>(
    model: &M,
    segment: &Tensor<T>,
    cfg: &LatencyConfig,
) -> Result<LatencyReport> {
    if cfg.runs == 0 {
        return Err(Error::config("bench.runs", "must be >= 1"));
    }
    let (c, w) = model.input_shape();
    let seg = match segment.shape() {
        [sc, sw] if *sc == c && *sw == w => segment.clone().reshape(vec![1, c, w])?,
        [1, sc, sw] if *sc == c && *sw == w => segment.clone(),
        s => {
            return Err(Error::shape(
                "latency_run",
                "segment",
                format!("[{c}, {w}]"),
                format!("{s:?}"),
            ))
        }
    };
    let was_parallel = par::is_parallel();
    if cfg.sequential {
        par::force_sequential(true);
    }
    let result = (|| {
        for _ in 0..cfg.warmup {
            std::hint::black_box(model.logits(seg.clone())?);
        }
        let mut durations = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            let input = seg.clone();
            let t0 = Instant::now();
            std::hint::black_box(model.logits(input)?);
            durations.push(t0.elapsed().as_secs_f64() * 1000.0);
        }
        Ok::<_, Error>(durations)
    })();
    let host = HostDescriptor::current();
    if cfg.sequential {
        par::force_sequential(!was_parallel);
    }
    let durations = result?;
    let mut sorted = durations.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        model: model.name(),
        config_hash: model.config_hash(),
        mean_ms: durations.iter().sum::<f64>() / durations.len() as f64,
        p50_ms: percentile(&sorted, 0.50),
        p95_ms: percentile(&sorted, 0.95),
        max_ms: *sorted.last().expect("runs >= 1"),
        misses: durations.iter().filter(|&&d| d > cfg.deadline_ms).count(),
        warmup: cfg.warmup,
        deadline_ms: cfg.deadline_ms,
        durations_ms: durations,
        host,
    })
}

pub fn latency_csv(r: &LatencyReport) -> String {
    let mut s = String::from("run,ms\n");
    for (i, d) in r.durations_ms.iter().enumerate() {
        let _ = writeln!(s, "{i},{d}");
    }
    s
}

/// Gnuplot-ready `bin_center count` rows over `[min, max]`.
pub fn histogram(durations: &[f64], bins: usize) -> String {
    let mut s = String::from("# bin_center_ms count\n");
    if durations.is_empty() || bins == 0 {
        return s;
    }
    let lo = durations.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = durations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for &d in durations {
        let b = (((d - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    for (i, n) in counts.iter().enumerate() {
        let _ = writeln!(s, "{} {n}", lo + (i as f64 + 0.5) * width);
    }
    s
}
