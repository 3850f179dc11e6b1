use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::substrate::checkpoint::config_hash;
use crate::substrate::{Conv1d, ConvSpec, Dense, Init, ParamStore, Real, Session, Var};

use super::{check_input, Classifier};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlainCnnConfig {
    pub channels: usize,
    pub window: usize,
    pub num_classes: usize,
    pub widths: [usize; 2],
    pub taps: usize,
}

impl PlainCnnConfig {
    pub fn new(channels: usize, window: usize, num_classes: usize) -> Self {
        Self {
            channels,
            window,
            num_classes,
            widths: [32, 64],
            taps: 5,
        }
    }
}

/// Two convolutions, global pooling and a linear head. Reference model with
/// no grouping or attention.
#[derive(Clone, Debug)]
pub struct PlainCnn<T: Real> {
    pub config: PlainCnnConfig,
    store: ParamStore<T>,
    conv1: Conv1d,
    conv2: Conv1d,
    head: Dense,
}

impl<T: Real> PlainCnn<T> {
    pub fn new(config: PlainCnnConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let spec = ConvSpec {
            stride: 1,
            padding: config.taps / 2,
            groups: 1,
        };
        let [w1, w2] = config.widths;
        let conv1 = Conv1d::new(
            &mut store,
            &mut init,
            "conv1",
            config.channels,
            w1,
            config.taps,
            spec,
            true,
        );
        let conv2 = Conv1d::new(
            &mut store,
            &mut init,
            "conv2",
            w1,
            w2,
            config.taps,
            spec,
            true,
        );
        let head = Dense::new(&mut store, &mut init, "head", w2, config.num_classes, 1);
        Self {
            config,
            store,
            conv1,
            conv2,
            head,
        }
    }
}

impl<T: Real> Classifier<T> for PlainCnn<T> {
    fn name(&self) -> String {
        "plain-cnn".into()
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
        config_hash(&format!(
            "plain-cnn\n{}",
            toml::to_string(&self.config).expect("config serializes")
        ))
    }

    fn forward(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        check_input(&s.graph, x, self.input_shape())?;
        let h = self.conv1.forward(s, x)?;
        let h = s.graph.relu(h);
        let h = self.conv2.forward(s, h)?;
        let h = s.graph.relu(h);
        let h = s.graph.global_avg_pool(h)?;
        self.head.forward(s, h)
    }
}
