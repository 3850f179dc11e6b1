use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SplitFractions, SplitPolicy};
use crate::msti::{MstiConfig, Stage, Variant};
use crate::substrate::checkpoint::config_hash;
use crate::train::{
    AccSource, AdamConfig, DataSource, DecayMode, FitSchedule, FocalParams, LossMode,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// Generated sinusoid classes.
    Synthetic,
    /// WISDM v1.1 raw accelerometer file.
    Wisdm,
    /// CSV with a `label,subject,ch...` header.
    Generic,
    /// A dataset cache written by `ingest`.
    Cache,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: usize,
    pub channels: usize,
    /// Windows per class; a single entry is repeated for every class.
    pub per_class: Vec<usize>,
    pub noise_std: f64,
    pub subjects: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub window: usize,
    /// Defaults to half the window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub split: SplitPolicy,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub sample_rate_hz: f64,
    pub synthetic: SyntheticSection,
}

impl DatasetConfig {
    pub fn step(&self) -> usize {
        self.step.unwrap_or((self.window / 2).max(1))
    }

    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_fraction,
            val: self.val_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub cardinality: usize,
    pub radix: usize,
    pub stem_taps: usize,
    pub stem_channels: usize,
    pub stages: Vec<Stage>,
    pub reduction: usize,
    pub min_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = MstiConfig::default_for(1, 1, 1);
        Self {
            variant: d.variant,
            cardinality: d.cardinality,
            radix: d.radix,
            stem_taps: d.stem_taps,
            stem_channels: d.stem_channels,
            stages: d.stages,
            reduction: d.reduction,
            min_hidden: d.min_hidden,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, channels: usize, window: usize, num_classes: usize) -> MstiConfig {
        MstiConfig {
            channels,
            window,
            num_classes,
            cardinality: self.cardinality,
            radix: self.radix,
            stem_taps: self.stem_taps,
            stem_channels: self.stem_channels,
            stages: self.stages.clone(),
            variant: self.variant,
            reduction: self.reduction,
            min_hidden: self.min_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay: DecayMode,
    pub loss: LossMode,
    pub focal: FocalParams,
    pub acc_source: AccSource,
    /// Epochs of the synthetic-data phase (only when synthesis is enabled).
    pub syn_epochs: usize,
    /// Train the synthetic phase on synthetic plus real windows.
    pub syn_mix_real: bool,
    /// Keep the weights of the best validation epoch instead of the last.
    pub restore_best: bool,
}

impl TrainConfig {
    fn with_table(epochs: usize, batch_size: usize, lr: f64) -> Self {
        let a = AdamConfig::with_lr(lr);
        Self {
            epochs,
            batch_size,
            lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            decay: a.decay,
            loss: LossMode::adaptive(0.5),
            focal: FocalParams::default(),
            acc_source: AccSource::Train,
            syn_epochs: 2,
            syn_mix_real: false,
            restore_best: true,
        }
    }

    pub fn schedule(&self, data: DataSource, epochs: usize, seed: u64) -> FitSchedule {
        FitSchedule {
            epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
                decay: self.decay,
            },
            loss: self.loss,
            focal: self.focal,
            acc_source: self.acc_source,
            data,
            seed,
            restore_best: self.restore_best,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub enabled: bool,
    /// Diffusion steps T.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub pretrain_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    /// Extra re-noise/denoise rounds at generation.
    pub refine: usize,
    /// Windows generated per class; omitted means "top every class up to the
    /// largest real class".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            steps: 50,
            beta_start: 0.999,
            beta_end: 0.02,
            pretrain_steps: 200,
            batch_size: 16,
            lr: 2e-3,
            hidden: 32,
            refine: 0,
            per_class: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub enabled: bool,
    pub runs: usize,
    pub warmup: usize,
    /// Defaults to 5% of the window duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ms: Option<f64>,
    /// Replayed stream length in windows.
    pub stream_windows: usize,
    /// Also time the plain CNN reference.
    pub baseline: bool,
    pub sequential: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            runs: 100,
            warmup: 10,
            deadline_ms: None,
            stream_windows: 10,
            baseline: true,
            sequential: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root; falls back to `$MSTI_OUT`, then `runs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub bench: BenchConfig,
}

pub const PRESETS: [&str; 4] = ["wisdm", "pamap2", "opportunity", "wisdm-synthetic"];

fn dataset(
    source: SourceKind,
    window: usize,
    classes: usize,
    channels: usize,
    rate: f64,
) -> DatasetConfig {
    DatasetConfig {
        source,
        path: None,
        window,
        step: None,
        split: SplitPolicy::Stratified,
        train_fraction: 0.70,
        val_fraction: 0.15,
        sample_rate_hz: rate,
        synthetic: SyntheticSection {
            classes,
            channels,
            per_class: vec![143],
            noise_std: 0.3,
            subjects: 8,
        },
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = |d: DatasetConfig, t: TrainConfig| Self {
            seed: 0,
            output_root: None,
            dataset: d,
            model: ModelConfig::default(),
            train: t,
            synth: SynthConfig::default(),
            bench: BenchConfig::default(),
        };
        Ok(match name {
            "wisdm" => base(
                dataset(SourceKind::Wisdm, 90, 6, 3, 20.0),
                TrainConfig::with_table(50, 512, 0.005),
            ),
            "pamap2" => base(
                dataset(SourceKind::Generic, 171, 12, 40, 100.0),
                TrainConfig::with_table(30, 256, 0.001),
            ),
            "opportunity" => base(
                dataset(SourceKind::Generic, 113, 5, 113, 30.0),
                TrainConfig::with_table(40, 256, 0.001),
            ),
            "wisdm-synthetic" => {
                let mut c = base(
                    dataset(SourceKind::Synthetic, 90, 3, 3, 20.0),
                    TrainConfig::with_table(6, 32, 0.005),
                );
                c.synth = SynthConfig {
                    enabled: true,
                    pretrain_steps: 300,
                    per_class: Some(20),
                    ..SynthConfig::default()
                };
                c.train.syn_epochs = 1;
                c.bench.runs = 50;
                c.bench.warmup = 5;
                c.bench.stream_windows = 3;
                c
            }
            other => {
                return Err(Error::config(
                    "preset",
                    format!(
                        "unknown preset `{other}` (expected one of {})",
                        PRESETS.join(", ")
                    ),
                ))
            }
        })
    }

    /// Parses TOML text, reporting the dotted path of the first bad field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text)?;
        Self::from_table(value)
    }

    pub fn from_table(t: toml::Table) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(t)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `path=value` overrides (value parsed as a TOML literal, else
    /// taken as a string) and re-validates.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut t = self.to_table();
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o.split_once('=').ok_or_else(|| {
                Error::config(o.to_string(), "override must look like path=value")
            })?;
            set_path(&mut t, path.trim(), parse_literal(raw.trim()))?;
        }
        Self::from_table(t)
    }

    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_root = None;
        config_hash(&c.to_toml())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.window < 2 {
            return Err(Error::config("dataset.window", "must be >= 2"));
        }
        if d.step() == 0 || d.step() > d.window {
            return Err(Error::config(
                "dataset.step",
                format!("must lie in 1..={}", d.window),
            ));
        }
        let fr = d.fractions();
        if !(fr.train > 0.0 && fr.val >= 0.0 && fr.train + fr.val <= 1.0) {
            return Err(Error::config(
                "dataset.train_fraction",
                "fractions must be positive and sum to at most 1",
            ));
        }
        if d.sample_rate_hz.is_nan() || d.sample_rate_hz <= 0.0 {
            return Err(Error::config("dataset.sample_rate_hz", "must be > 0"));
        }
        let s = &d.synthetic;
        if s.classes == 0 || s.channels == 0 {
            return Err(Error::config(
                "dataset.synthetic.classes",
                "classes and channels must be >= 1",
            ));
        }
        if s.per_class.is_empty() || (s.per_class.len() != 1 && s.per_class.len() != s.classes) {
            return Err(Error::config(
                "dataset.synthetic.per_class",
                "give one count or one per class",
            ));
        }
        self.model.build(1, d.window, 1).validate()?;
        self.train
            .schedule(DataSource::Real, self.train.epochs, 0)
            .validate()?;
        if self.synth.enabled {
            if self.synth.pretrain_steps == 0 {
                return Err(Error::config("synth.pretrain_steps", "must be >= 1"));
            }
            if self.synth.steps < 2 {
                return Err(Error::config("synth.steps", "must be >= 2"));
            }
        }
        if self.bench.enabled && self.bench.runs == 0 {
            return Err(Error::config("bench.runs", "must be >= 1"));
        }
        Ok(())
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        let mut c = self.clone();
        c.model.variant = v;
        c
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(t: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts = path.split('.').peekable();
    let mut cur = t;
    while let Some(p) = parts.next() {
        if p.is_empty() {
            return Err(Error::config(path.to_string(), "empty path segment"));
        }
        if parts.peek().is_none() {
            cur.insert(p.to_string(), value);
            return Ok(());
        }
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| Error::config(path.to_string(), format!("`{p}` is not a table")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_table_values() {
        for (name, w, b, lr, e) in [
            ("wisdm", 90, 512, 0.005, 50),
            ("pamap2", 171, 256, 0.001, 30),
            ("opportunity", 113, 256, 0.001, 40),
        ] {
            let c = RunConfig::preset(name).unwrap();
            assert_eq!(
                (
                    c.dataset.window,
                    c.train.batch_size,
                    c.train.lr,
                    c.train.epochs
                ),
                (w, b, lr, e),
                "{name}"
            );
        }
        assert!(RunConfig::preset("nope").unwrap_err().is_config());
    }

    #[test]
    fn toml_round_trip() {
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_and_invalid_fields_name_their_path() {
        let c = RunConfig::preset("wisdm-synthetic").unwrap();
        let e = c.with_overrides(&["train.epochz=3"]).unwrap_err();
        assert!(
            matches!(&e, Error::Config { path, .. } if path.starts_with("train")),
            "{e}"
        );
        let e = c.with_overrides(&["train.batch_size=\"big\""]).unwrap_err();
        assert!(
            matches!(&e, Error::Config { path, .. } if path == "train.batch_size"),
            "{e}"
        );
        let e = c.with_overrides(&["model.stages[0].width=7"]);
        assert!(e.is_err());
        let mut bad = c.to_table();
        bad["model"]["stages"][0]["width"] = toml::Value::Integer(6);
        let e = RunConfig::from_table(bad).unwrap_err();
        assert!(
            matches!(&e, Error::Config { path, .. } if path == "model.stages[0].width"),
            "{e}"
        );
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::preset("wisdm").unwrap();
        let o = c
            .with_overrides(&[
                "seed=9",
                "train.loss={kind=\"fixed\", weights=[0.3,0.4,0.3]}",
                "dataset.path=data/x.txt",
            ])
            .unwrap();
        assert_eq!(o.seed, 9);
        assert_eq!(
            o.train.loss,
            LossMode::Fixed {
                weights: [0.3, 0.4, 0.3]
            }
        );
        assert_eq!(o.dataset.path, Some(PathBuf::from("data/x.txt")));
        assert_ne!(o.hash(), c.hash());
    }
}
