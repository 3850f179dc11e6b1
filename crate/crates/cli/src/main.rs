//! `msti` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msti_core::bench::{count_params, latency_run, stream_replay, stream_step, LatencyConfig};
use msti_core::ingest::save_dataset;
use msti_core::msti::{analytic_param_count, Msti, Variant};
use msti_core::pipeline::{
    collect_report, eval_stage, generate_into, load_data, load_denoiser, load_model, model_config,
    output_root, pretrain_denoiser, replay_stream, report_csv, report_text, run_dir, run_pipeline,
    train_stage, RunConfig,
};
use msti_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "msti",
    version,
    about = "Split-attention activity recognition: data, synthesis, training, evaluation and latency"
)]
struct Cli {
    /// Log filter (error, warn, info, debug, trace); `RUST_LOG` also works.
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate a dataset, window and split it, and write a dataset cache.
    Ingest(RunArgs),
    /// Diffusion augmenter: pretrain a denoiser or generate windows with one.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train a model on the configured dataset and save the best checkpoint.
    Train(RunArgs),
    /// Evaluate a saved model on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Directory holding `model.toml` and `model_config.toml`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Parameter counts, latency and stream replay.
    Bench {
        #[arg(value_enum)]
        what: BenchWhat,
        #[command(flatten)]
        run: RunArgs,
        /// Saved model directory; a freshly initialized model is used when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// ingest, synth (if enabled), train, eval and bench in one run.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variants (base, spatial, temporal, full) or `all`;
        /// one run each [config: model.variant].
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Summarize every run directory under DIR into one table.
    Report {
        dir: PathBuf,
        /// Also write the table as CSV here (default: DIR/report.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Train the denoiser on real training windows.
    Pretrain(RunArgs),
    /// Generate labeled windows and write the augmented dataset cache.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        /// Directory holding `denoiser.toml` and `denoiser_config.toml`.
        #[arg(long)]
        denoiser: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchWhat {
    Params,
    Latency,
    Stream,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Built-in configuration: wisdm, pamap2, opportunity or wisdm-synthetic
    /// (default when no --config is given).
    #[arg(long)]
    preset: Option<String>,
    /// TOML run configuration; replaces --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed [config: seed].
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset source: synthetic, wisdm, generic or cache [config: dataset.source].
    #[arg(long)]
    source: Option<String>,
    /// Input file: raw data, or a dataset cache manifest with `--source cache`
    /// [config: dataset.path].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Window length in samples [config: dataset.window].
    #[arg(long)]
    window: Option<usize>,
    /// Model variant: base, spatial, temporal or full [config: model.variant].
    #[arg(long)]
    variant: Option<String>,
    /// Real-data epochs [config: train.epochs].
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [config: train.batch_size].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate [config: train.lr].
    #[arg(long)]
    lr: Option<f64>,
    /// Enable or disable diffusion augmentation [config: synth.enabled].
    #[arg(long)]
    synth: Option<bool>,
    /// Timed inference runs [config: bench.runs].
    #[arg(long)]
    runs: Option<usize>,
    /// Output root; defaults to $MSTI_OUT, then ./runs [config: output_root].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run directory name instead of run-<unix time>-<seed>.
    #[arg(long)]
    run_name: Option<String>,
    /// Any config value as PATH=VALUE, e.g. `train.loss={kind="ceonly"}`;
    /// repeatable, applied after the flags above.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    path: "preset".into(),
                    msg: "--preset and --config are mutually exclusive".into(),
                })
            }
            (Some(path), None) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                RunConfig::from_toml(&text)?
            }
            (None, p) => RunConfig::preset(p.as_deref().unwrap_or("wisdm-synthetic"))?,
        };
        let quote = |s: &str| format!("{s:?}");
        let mut o: Vec<String> = Vec::new();
        if let Some(v) = self.seed {
            o.push(format!("seed={v}"));
        }
        if let Some(v) = &self.source {
            o.push(format!("dataset.source={}", quote(v)));
        }
        if let Some(v) = &self.data {
            o.push(format!("dataset.path={}", quote(&v.to_string_lossy())));
        }
        if let Some(v) = self.window {
            o.push(format!("dataset.window={v}"));
        }
        if let Some(v) = &self.variant {
            o.push(format!("model.variant={}", quote(v)));
        }
        if let Some(v) = self.epochs {
            o.push(format!("train.epochs={v}"));
        }
        if let Some(v) = self.batch_size {
            o.push(format!("train.batch_size={v}"));
        }
        if let Some(v) = self.lr {
            o.push(format!("train.lr={v:?}"));
        }
        if let Some(v) = self.synth {
            o.push(format!("synth.enabled={v}"));
        }
        if let Some(v) = self.runs {
            o.push(format!("bench.runs={v}"));
        }
        if let Some(v) = &self.out {
            o.push(format!("output_root={}", quote(&v.to_string_lossy())));
        }
        o.extend(self.set.iter().cloned());
        base.with_overrides(&o)
    }

    fn dir(&self, cfg: &RunConfig) -> PathBuf {
        run_dir(&output_root(cfg), self.run_name.as_deref(), cfg.seed)
    }
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })?;
    let p = dir.join("config.toml");
    std::fs::write(&p, cfg.to_toml()).map_err(|e| Error::Io { path: p, source: e })
}

fn print_json<S: serde::Serialize>(v: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_ablation(spec: &str) -> Result<Vec<Variant>> {
    if spec == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    spec.split(',').map(|s| s.trim().parse()).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let cfg = a.resolve()?;
            let dir = a.dir(&cfg);
            write_config(&cfg, &dir)?;
            let data = load_data(&cfg)?;
            save_dataset(&data, &dir.join("dataset.toml"))?;
            std::fs::write(dir.join("dataset.txt"), data.distribution_report()).map_err(|e| {
                Error::Io {
                    path: dir.join("dataset.txt"),
                    source: e,
                }
            })?;
            print!("{}", data.distribution_report());
            println!("dataset cache: {}", dir.join("dataset.toml").display());
        }
        Command::Synth(SynthCommand::Pretrain(a)) => {
            let cfg = a.resolve()?;
            let dir = a.dir(&cfg);
            write_config(&cfg, &dir)?;
            let data = load_data(&cfg)?;
            let (_, trace) = pretrain_denoiser(&cfg, &data, &dir)?;
            println!(
                "L_rec {:.5} -> {:.5} over {} steps; denoiser saved in {}",
                trace.first().copied().unwrap_or(f64::NAN),
                trace.last().copied().unwrap_or(f64::NAN),
                trace.len(),
                dir.display()
            );
        }
        Command::Synth(SynthCommand::Generate { run: a, denoiser }) => {
            let cfg = a.resolve()?;
            let dir = a.dir(&cfg);
            write_config(&cfg, &dir)?;
            let mut data = load_data(&cfg)?;
            let den = load_denoiser(&denoiser)?;
            let plan = generate_into(&cfg, &den, &mut data, &dir)?;
            println!(
                "generated per class {plan:?}; augmented cache {}",
                dir.join("augmented.toml").display()
            );
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let dir = a.dir(&cfg);
            write_config(&cfg, &dir)?;
            let data = load_data(&cfg)?;
            let (_, reports) = train_stage(&cfg, &data, &dir)?;
            let last = reports.last().expect("real phase");
            println!(
                "best val acc {:.4} at epoch {}; checkpoint in {}",
                last.best_val_acc,
                last.best_epoch,
                dir.display()
            );
        }
        Command::Eval { run: a, model } => {
            let cfg = a.resolve()?;
            let dir = a.dir(&cfg);
            write_config(&cfg, &dir)?;
            let data = load_data(&cfg)?;
            let m = load_model(&model)?;
            let doc = eval_stage(&cfg, &m, &data, &dir)?;
            print_json(&doc)?;
        }
        Command::Bench {
            what,
            run: a,
            model,
        } => {
            let cfg = a.resolve()?;
            let data = load_data(&cfg)?;
            let m = match &model {
                Some(p) => load_model(p)?,
                None => Msti::<f32>::new(model_config(&cfg, &data), cfg.seed)?,
            };
            match what {
                BenchWhat::Params => {
                    let r = count_params(&m)?;
                    print_json(&r)?;
                    println!("analytic count: {}", analytic_param_count(&m.config));
                }
                BenchWhat::Latency => {
                    let w = data.window_len();
                    let lcfg = LatencyConfig {
                        runs: cfg.bench.runs,
                        warmup: cfg.bench.warmup,
                        deadline_ms: cfg.bench.deadline_ms.unwrap_or_else(|| {
                            msti_core::bench::default_deadline_ms(w, cfg.dataset.sample_rate_hz)
                        }),
                        sequential: cfg.bench.sequential,
                    };
                    let seg = data
                        .batch::<f32>(&[data
                            .splits
                            .test
                            .first()
                            .or(data.splits.train.first())
                            .copied()
                            .unwrap_or(0)])
                        .0;
                    let mut r = latency_run(&m, &seg, &lcfg)?;
                    let n = r.durations_ms.len();
                    r.durations_ms.clear();
                    print_json(&r)?;
                    println!("({n} timed runs)");
                }
                BenchWhat::Stream => {
                    let w = data.window_len();
                    let step = stream_step(w);
                    let step_ms = step as f64 / cfg.dataset.sample_rate_hz * 1000.0;
                    let s = stream_replay(
                        &m,
                        &replay_stream(&data, cfg.bench.stream_windows),
                        Some(&data.normalization),
                        step,
                        step_ms,
                    )?;
                    let misses = s.segments.iter().filter(|x| x.missed).count();
                    println!(
                        "{} segments (window {w}, step {step}), deadline {step_ms:.1} ms, {misses} missed, met fraction {:.3}",
                        s.segments.len(),
                        s.met_fraction
                    );
                }
            }
        }
        Command::Pipeline { run: a, ablation } => {
            let cfg = a.resolve()?;
            let variants = match &ablation {
                Some(spec) => parse_ablation(spec)?,
                None => vec![cfg.model.variant],
            };
            let base_dir = a.dir(&cfg);
            for v in variants {
                let c = cfg.with_variant(v);
                let dir = if ablation.is_some() {
                    let name = base_dir
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    base_dir.with_file_name(format!("{name}-{}", v.as_str()))
                } else {
                    base_dir.clone()
                };
                let out = run_pipeline(&c, &dir)?;
                let m = &out.metrics.metrics;
                print!(
                    "{}: acc {:.2}% f1w {:.4} gmean(std) {:.4} params {}",
                    dir.display(),
                    m.accuracy_pct,
                    m.f1_weighted,
                    m.gmean_standard,
                    out.metrics.params
                );
                match &out.bench {
                    Some(b) => println!(" p95 {:.3} ms", b.latency.p95_ms),
                    None => println!(),
                }
            }
        }
        Command::Report { dir, csv } => {
            let rows = collect_report(&dir)?;
            print!("{}", report_text(&rows));
            let path = csv.unwrap_or_else(|| dir.join("report.csv"));
            std::fs::write(&path, report_csv(&rows)).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
