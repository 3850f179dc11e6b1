use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bench::{
    count_params, default_deadline_ms, histogram, latency_csv, latency_run, stream_replay,
    stream_step, ComplexityReport, LatencyConfig, LatencyReport, StreamReport,
};
use crate::error::{Error, Result};
use crate::ingest::{
    load_dataset, load_generic_csv, load_wisdm_csv, make_synthetic_dataset, save_dataset, window,
    SensorStream, SyntheticSpec, WindowedDataset,
};
use crate::metrics::{confusion, metrics, MetricsReport};
use crate::msti::{Classifier, Msti, MstiConfig, PlainCnn, PlainCnnConfig};
use crate::substrate::checkpoint;
use crate::synth::{
    balance_plan, pretrain, synthesize, Denoiser, DenoiserConfig, DiffusionSchedule, PretrainConfig,
};
use crate::train::{fit, predict_indices, trace_csv, DataSource, FitReport};

use super::config::{RunConfig, SourceKind};

pub const OUT_ENV: &str = "MSTI_OUT";

// Offsets that give each stage its own stream from the run seed.
const SEED_MODEL: u64 = 1;
const SEED_DENOISER: u64 = 2;
const SEED_PRETRAIN: u64 = 3;
const SEED_GENERATE: u64 = 4;
const SEED_FIT_SYN: u64 = 5;
const SEED_FIT_REAL: u64 = 6;
const SEED_BASELINE: u64 = 7;

/// `output_root` from the config, else `$MSTI_OUT`, else `runs`.
pub fn output_root(cfg: &RunConfig) -> PathBuf {
    cfg.output_root
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// `<root>/<name>` or `<root>/run-<unix seconds>-<seed>`.
pub fn run_dir(root: &Path, name: Option<&str>, seed: u64) -> PathBuf {
    match name {
        Some(n) => root.join(n),
        None => {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            root.join(format!("run-{secs}-{seed}"))
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn stage<R>(name: &'static str, f: impl FnOnce() -> Result<R>) -> Result<R> {
    log::info!("stage {name}");
    f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Builds the windowed dataset described by `cfg.dataset`.
pub fn load_data(cfg: &RunConfig) -> Result<WindowedDataset> {
    let d = &cfg.dataset;
    let need_path = || {
        d.path.clone().ok_or_else(|| {
            Error::config(
                "dataset.path",
                format!("required for source `{:?}`", d.source).to_lowercase(),
            )
        })
    };
    let from_streams = |loaded: crate::ingest::LoadedStreams| -> Result<WindowedDataset> {
        let mut windows = Vec::new();
        for s in &loaded.streams {
            windows.extend(window(s, d.window, d.step())?);
        }
        if windows.is_empty() {
            return Err(Error::Empty(format!(
                "window list (no stream reaches {} samples)",
                d.window
            )));
        }
        let k = loaded.class_names.len();
        WindowedDataset::new(
            windows,
            k,
            loaded.class_names,
            d.split,
            d.fractions(),
            cfg.seed,
        )
    };
    match d.source {
        SourceKind::Synthetic => {
            let s = &d.synthetic;
            let per_class = if s.per_class.len() == 1 {
                vec![s.per_class[0]; s.classes]
            } else {
                s.per_class.clone()
            };
            let spec = SyntheticSpec {
                classes: s.classes,
                channels: s.channels,
                window: d.window,
                per_class,
                seed: cfg.seed,
                noise_std: s.noise_std,
                subjects: s.subjects,
            };
            make_synthetic_dataset(&spec, d.split, d.fractions())
        }
        SourceKind::Wisdm => from_streams(load_wisdm_csv(&need_path()?)?),
        SourceKind::Generic => from_streams(load_generic_csv(&need_path()?)?),
        SourceKind::Cache => {
            let data = load_dataset(&need_path()?)?;
            if data.window_len() != d.window {
                return Err(Error::config(
                    "dataset.window",
                    format!("cache holds windows of {}", data.window_len()),
                ));
            }
            Ok(data)
        }
    }
}

pub fn schedule_of(cfg: &RunConfig) -> Result<DiffusionSchedule> {
    DiffusionSchedule::linear(cfg.synth.steps, cfg.synth.beta_start, cfg.synth.beta_end)
}

pub fn model_config(cfg: &RunConfig, data: &WindowedDataset) -> MstiConfig {
    cfg.model
        .build(data.channels(), data.window_len(), data.num_classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOutcome {
    pub l_rec_first: f64,
    pub l_rec_last: f64,
    pub generated_per_class: Vec<usize>,
}

/// Pretrains a fresh denoiser on the real train windows and saves it, with
/// its config and the `L_rec` trace, under `sdir`.
pub fn pretrain_denoiser(
    cfg: &RunConfig,
    data: &WindowedDataset,
    sdir: &Path,
) -> Result<(Denoiser<f32>, Vec<f64>)> {
    let schedule = schedule_of(cfg)?;
    let mut dcfg = DenoiserConfig::new(data.channels(), data.window_len());
    dcfg.hidden = cfg.synth.hidden;
    let mut den = Denoiser::<f32>::new(dcfg.clone(), cfg.seed + SEED_DENOISER)?;
    let pcfg = PretrainConfig {
        steps: cfg.synth.pretrain_steps,
        batch_size: cfg.synth.batch_size,
        lr: cfg.synth.lr,
        seed: cfg.seed + SEED_PRETRAIN,
    };
    let trace = pretrain(&mut den, data, &schedule, &pcfg)?;
    let mut csv = String::from("step,l_rec\n");
    for (i, v) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{v}\n"));
    }
    write(&sdir.join("l_rec.csv"), csv)?;
    write(&sdir.join("denoiser_config.toml"), toml::to_string(&dcfg)?)?;
    checkpoint::save(&den.store, &dcfg.hash(), &sdir.join("denoiser.toml"))?;
    Ok((den, trace))
}

/// Loads a denoiser saved by [`pretrain_denoiser`].
pub fn load_denoiser(sdir: &Path) -> Result<Denoiser<f32>> {
    let cpath = sdir.join("denoiser_config.toml");
    let text = fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
    let dcfg: DenoiserConfig = toml::from_str(&text)?;
    let mut den = Denoiser::<f32>::new(dcfg.clone(), 0)?;
    checkpoint::load_into(
        &mut den.store,
        &sdir.join("denoiser.toml"),
        Some(&dcfg.hash()),
    )?;
    Ok(den)
}

/// Generates windows per the config, appends them to the train split and
/// writes the augmented dataset cache to `sdir/augmented.toml`. Returns the
/// per-class counts generated.
pub fn generate_into(
    cfg: &RunConfig,
    den: &Denoiser<f32>,
    data: &mut WindowedDataset,
    sdir: &Path,
) -> Result<Vec<usize>> {
    let schedule = schedule_of(cfg)?;
    let plan = match cfg.synth.per_class {
        Some(n) => vec![n; data.num_classes],
        None => balance_plan(data),
    };
    let windows = synthesize(
        den,
        &schedule,
        data,
        &plan,
        cfg.seed + SEED_GENERATE,
        cfg.synth.refine,
    )?;
    data.add_train_windows(windows)?;
    save_dataset(data, &sdir.join("augmented.toml"))?;
    Ok(plan)
}

/// Pretrains the denoiser, generates windows and appends them to the train
/// split of `data`. Artifacts go to `dir/synth`.
pub fn synth_stage(
    cfg: &RunConfig,
    data: &mut WindowedDataset,
    dir: &Path,
) -> Result<SynthOutcome> {
    let sdir = dir.join("synth");
    let (den, trace) = pretrain_denoiser(cfg, data, &sdir)?;
    let plan = generate_into(cfg, &den, data, &sdir)?;
    Ok(SynthOutcome {
        l_rec_first: trace.first().copied().unwrap_or(f64::NAN),
        l_rec_last: trace.last().copied().unwrap_or(f64::NAN),
        generated_per_class: plan,
    })
}

/// Trains a fresh model: a synthetic-data phase when synthetic windows are
/// present and `syn_epochs > 0`, then the real-data phase. Writes traces,
/// the model config and the best-validation checkpoint.
pub fn train_stage(
    cfg: &RunConfig,
    data: &WindowedDataset,
    dir: &Path,
) -> Result<(Msti<f32>, Vec<FitReport>)> {
    let mcfg = model_config(cfg, data);
    let mut model = Msti::<f32>::new(mcfg.clone(), cfg.seed + SEED_MODEL)?;
    let mut reports = Vec::new();
    let has_synthetic = data.splits.train.iter().any(|&i| data.windows[i].synthetic);
    if has_synthetic && cfg.train.syn_epochs > 0 {
        let source = if cfg.train.syn_mix_real {
            DataSource::Mixed
        } else {
            DataSource::Synthetic
        };
        let r = fit(
            &mut model,
            data,
            &cfg.train
                .schedule(source, cfg.train.syn_epochs, cfg.seed + SEED_FIT_SYN),
        )?;
        write(&dir.join("trace_syn.csv"), trace_csv(&r.records))?;
        reports.push(r);
    }
    let r = fit(
        &mut model,
        data,
        &cfg.train
            .schedule(DataSource::Real, cfg.train.epochs, cfg.seed + SEED_FIT_REAL),
    )?;
    write(&dir.join("trace_real.csv"), trace_csv(&r.records))?;
    reports.push(r);
    write(
        &dir.join("train_summary.toml"),
        toml::to_string(&TrainSummary {
            phases: reports.clone(),
        })?,
    )?;
    write(&dir.join("model_config.toml"), mcfg.to_toml())?;
    checkpoint::save(model.store(), &mcfg.hash(), &dir.join("model.toml"))?;
    Ok((model, reports))
}

#[derive(Serialize)]
struct TrainSummary {
    phases: Vec<FitReport>,
}

/// Loads a model saved by [`train_stage`] from `dir`.
pub fn load_model(dir: &Path) -> Result<Msti<f32>> {
    let cpath = dir.join("model_config.toml");
    let text = fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
    let mcfg: MstiConfig = toml::from_str(&text)?;
    let mut model = Msti::<f32>::new(mcfg.clone(), 0)?;
    checkpoint::load_into(
        model.store_mut(),
        &dir.join("model.toml"),
        Some(&mcfg.hash()),
    )?;
    Ok(model)
}

/// Contents of `metrics.json`. Holds no timings or timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub model: String,
    pub config_hash: String,
    pub run_config_hash: String,
    pub params: usize,
    pub split: String,
    pub metrics: MetricsReport,
}

/// Evaluates on the test split (validation if the test split is empty) and
/// writes `metrics.json` plus confusion matrices.
pub fn eval_stage<M: Classifier<f32> + ?Sized>(
    cfg: &RunConfig,
    model: &M,
    data: &WindowedDataset,
    dir: &Path,
) -> Result<MetricsDoc> {
    let (split, idx) = if data.splits.test.is_empty() {
        ("val", &data.splits.val)
    } else {
        ("test", &data.splits.test)
    };
    if idx.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let (preds, targets) = predict_indices(model, data, idx, cfg.train.batch_size)?;
    let cm = confusion(&preds, &targets, data.num_classes)?.with_names(&data.class_names);
    let report = metrics(&cm)?;
    write(&dir.join("confusion.csv"), cm.to_csv())?;
    write(&dir.join("confusion_pct.csv"), cm.to_percent_csv())?;
    let doc = MetricsDoc {
        model: model.name(),
        config_hash: model.config_hash(),
        run_config_hash: cfg.hash(),
        params: model.store().num_params(),
        split: split.into(),
        metrics: report,
    };
    write_json(&dir.join("metrics.json"), &doc)?;
    Ok(doc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub complexity: ComplexityReport,
    pub latency: LatencyReport,
    pub baseline: Option<LatencyReport>,
    pub stream: StreamReport,
}

/// Concatenates raw test windows (validation, then train, if needed) into
/// one stream of `n_windows * W` samples.
pub fn replay_stream(data: &WindowedDataset, n_windows: usize) -> SensorStream {
    let (c, w) = (data.channels(), data.window_len());
    let order = data
        .splits
        .test
        .iter()
        .chain(&data.splits.val)
        .chain(&data.splits.train);
    let mut samples = Vec::with_capacity(n_windows * w * c);
    let mut labels = Vec::with_capacity(n_windows * w);
    for &i in order.take(n_windows) {
        let win = &data.windows[i];
        for t in 0..w {
            for ch in 0..c {
                samples.push(win.values.data()[ch * w + t]);
            }
            labels.push(win.label);
        }
    }
    SensorStream {
        subject: 0,
        channels: c,
        samples,
        labels,
    }
}

pub fn bench_stage(
    cfg: &RunConfig,
    model: &Msti<f32>,
    data: &WindowedDataset,
    dir: &Path,
) -> Result<BenchOutcome> {
    let b = &cfg.bench;
    let w = data.window_len();
    let deadline = b
        .deadline_ms
        .unwrap_or_else(|| default_deadline_ms(w, cfg.dataset.sample_rate_hz));
    let lcfg = LatencyConfig {
        runs: b.runs,
        warmup: b.warmup,
        deadline_ms: deadline,
        sequential: b.sequential,
    };
    let idx = data
        .splits
        .test
        .first()
        .or(data.splits.val.first())
        .or(data.splits.train.first())
        .copied();
    let segment = match idx {
        Some(i) => data.batch::<f32>(&[i]).0,
        None => return Err(Error::Empty("dataset for benchmark segment".into())),
    };
    let complexity = count_params(model)?;
    let latency = latency_run(model, &segment, &lcfg)?;
    let baseline = if b.baseline {
        let cnn = PlainCnn::<f32>::new(
            PlainCnnConfig::new(data.channels(), w, data.num_classes),
            cfg.seed + SEED_BASELINE,
        );
        Some(latency_run(&cnn, &segment, &lcfg)?)
    } else {
        None
    };
    let step = stream_step(w);
    let step_ms = step as f64 / cfg.dataset.sample_rate_hz * 1000.0;
    let stream = stream_replay(
        model,
        &replay_stream(data, b.stream_windows),
        Some(&data.normalization),
        step,
        step_ms,
    )?;

    write_json(&dir.join("complexity.json"), &complexity)?;
    write_json(&dir.join("latency.json"), &latency)?;
    write(&dir.join("latency.csv"), latency_csv(&latency))?;
    write(
        &dir.join("latency_hist.dat"),
        histogram(&latency.durations_ms, 20),
    )?;
    if let Some(bl) = &baseline {
        write_json(&dir.join("latency_baseline.json"), bl)?;
        write(&dir.join("latency_baseline.csv"), latency_csv(bl))?;
    }
    let mut scsv = String::from("segment,start,ms,missed,predicted\n");
    for s in &stream.segments {
        scsv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.index, s.start, s.ms, s.missed as u8, s.predicted
        ));
    }
    write(&dir.join("stream.csv"), scsv)?;
    write_json(&dir.join("stream.json"), &StreamSummary::of(&stream))?;
    Ok(BenchOutcome {
        complexity,
        latency,
        baseline,
        stream,
    })
}

#[derive(Serialize)]
struct StreamSummary {
    window: usize,
    step: usize,
    deadline_ms: f64,
    segments: usize,
    misses: usize,
    met_fraction: f64,
}

impl StreamSummary {
    fn of(r: &StreamReport) -> Self {
        Self {
            window: r.window,
            step: r.step,
            deadline_ms: r.deadline_ms,
            segments: r.segments.len(),
            misses: r.segments.iter().filter(|s| s.missed).count(),
            met_fraction: r.met_fraction,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub synth: Option<SynthOutcome>,
    pub fit: Vec<FitReport>,
    pub metrics: MetricsDoc,
    pub bench: Option<BenchOutcome>,
}

/// ingest → synth (optional) → train → eval → bench, writing every artifact
/// under `dir`. A failing stage is reported by name; earlier artifacts stay.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let mut data = stage("ingest", || {
        let d = load_data(cfg)?;
        write(&dir.join("dataset.txt"), d.distribution_report())?;
        Ok(d)
    })?;
    let synth = if cfg.synth.enabled {
        Some(stage("synth", || synth_stage(cfg, &mut data, dir))?)
    } else {
        None
    };
    let (model, fit) = stage("train", || train_stage(cfg, &data, dir))?;
    let metrics = stage("eval", || eval_stage(cfg, &model, &data, dir))?;
    let bench = if cfg.bench.enabled {
        Some(stage("bench", || bench_stage(cfg, &model, &data, dir))?)
    } else {
        None
    };
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        synth,
        fit,
        metrics,
        bench,
    })
}
