use crate::error::{Error, Result};
use crate::substrate::{BatchNorm, Conv1d, ConvSpec, Dense, Init, ParamStore, Real, Session, Var};

use super::block::{BlockTrace, SplitAttentionBlock};
use super::config::MstiConfig;
use super::{check_input, Classifier};

/// Stem, stacked split-attention blocks, global pooling and a linear head.
#[derive(Clone, Debug)]
pub struct Msti<T: Real> {
    pub config: MstiConfig,
    store: ParamStore<T>,
    stem: Conv1d,
    stem_bn: BatchNorm,
    pub blocks: Vec<SplitAttentionBlock>,
    head: Dense,
}

impl<T: Real> Msti<T> {
    pub fn new(config: MstiConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let pad = config.stem_taps / 2;
        let stem = Conv1d::new(
            &mut store,
            &mut init,
            "stem",
            config.channels,
            config.stem_channels,
            config.stem_taps,
            ConvSpec {
                stride: 1,
                padding: pad,
                groups: 1,
            },
            true,
        );
        let stem_bn = BatchNorm::new(&mut store, "stem_bn", config.stem_channels);
        let mut blocks = Vec::new();
        let mut cin = config.stem_channels;
        for (si, stage) in config.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let stride = if bi == 0 { 2 } else { 1 };
                let name = format!("stage{si}.block{bi}");
                blocks.push(SplitAttentionBlock::new(
                    &mut store,
                    &mut init,
                    &name,
                    &config,
                    cin,
                    stage.width,
                    stride,
                )?);
                cin = stage.width;
            }
        }
        let head = Dense::new(&mut store, &mut init, "head", cin, config.num_classes, 1);
        Ok(Self {
            config,
            store,
            stem,
            stem_bn,
            blocks,
            head,
        })
    }

    /// Forward pass that also returns each block's intermediate values.
    pub fn forward_traced(&self, s: &mut Session<'_, T>, x: Var) -> Result<(Var, Vec<BlockTrace>)> {
        check_input(&s.graph, x, self.input_shape())?;
        let h = self.stem.forward(s, x)?;
        let h = self.stem_bn.forward(s, h)?;
        let mut h = s.graph.relu(h);
        let mut traces = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let t = b.forward_traced(s, h)?;
            h = t.out;
            traces.push(t);
        }
        let pooled = s.graph.global_avg_pool(h)?;
        Ok((self.head.forward(s, pooled)?, traces))
    }
}

impl<T: Real> Classifier<T> for Msti<T> {
    fn name(&self) -> String {
        format!("msti-{}", self.config.variant.as_str())
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.config.channels, self.config.window)
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn config_hash(&self) -> String {
        self.config.hash()
    }

    fn forward(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(s, x)?.0)
    }
}

/// Closed-form trainable parameter count for a config, independent of the
/// layer constructors.
pub fn analytic_param_count(c: &MstiConfig) -> usize {
    let (k, r) = (c.cardinality, c.radix);
    let bn = |ch: usize| 2 * ch;
    let mut n = c.channels * c.stem_channels * c.stem_taps + c.stem_channels + bn(c.stem_channels);
    let mut cin = c.stem_channels;
    for stage in &c.stages {
        for bi in 0..stage.blocks {
            let w = stage.width;
            n += (cin / (k * r)) * 3 * w * r + w * r + bn(w * r);
            if c.variant.spatial() {
                n += 2 * 3 + 1;
            }
            if c.variant.temporal() {
                let h = c.hidden(w);
                n += h * (w / k) + h + (r * w) * (h / k) + r * w;
            }
            n += w * w + w + bn(w);
            if cin != w || bi == 0 {
                n += cin * w + w + bn(w);
            }
            cin = w;
        }
    }
    n + cin * c.num_classes + c.num_classes
}

impl<T: Real> Msti<T> {
    /// Rejects a checkpoint or store built for a different architecture.
    pub fn ensure_compatible(&self, other: &MstiConfig) -> Result<()> {
        if other != &self.config {
            return Err(Error::Checkpoint(format!(
                "model config mismatch: expected {}, found {}",
                self.config.hash(),
                other.hash()
            )));
        }
        Ok(())
    }
}
