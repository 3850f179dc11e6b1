//! Run configuration, the end-to-end pipeline and the cross-run report.

mod config;
mod report;
mod run;

pub use config::{
    BenchConfig, DatasetConfig, ModelConfig, RunConfig, SourceKind, SynthConfig, SyntheticSection,
    TrainConfig, PRESETS,
};
pub use report::{collect_report, report_csv, report_text, ReportRow, REPORT_COLUMNS};
pub use run::{
    bench_stage, eval_stage, generate_into, load_data, load_denoiser, load_model, model_config,
    output_root, pretrain_denoiser, replay_stream, run_dir, run_pipeline, schedule_of, synth_stage,
    train_stage, BenchOutcome, MetricsDoc, RunOutcome, SynthOutcome, OUT_ENV,
};
