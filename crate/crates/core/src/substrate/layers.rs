//! Parameterized layers built on [`Session`].

use crate::error::Result;

use super::graph::{BnMode, Var};
use super::kernels::ConvSpec;
use super::params::{BnUpdate, Init, Mode, ParamId, ParamStore, Session};
use super::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        taps: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Self {
        let cin_g = cin / spec.groups;
        let fan_in = cin_g * taps;
        let weight = store.add_param(
            format!("{name}.weight"),
            init.uniform(vec![cout, cin_g, taps], fan_in),
        );
        let bias =
            bias.then(|| store.add_param(format!("{name}.bias"), init.uniform(vec![cout], fan_in)));
        Self { weight, bias, spec }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.p(self.weight);
        let b = self.bias.map(|b| s.p(b));
        s.graph.conv1d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub groups: usize,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        n_in: usize,
        n_out: usize,
        groups: usize,
    ) -> Self {
        let in_g = n_in / groups;
        let weight = store.add_param(
            format!("{name}.weight"),
            init.uniform(vec![n_out, in_g], in_g),
        );
        let bias = store.add_param(format!("{name}.bias"), init.uniform(vec![n_out], in_g));
        Self {
            weight,
            bias,
            groups,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.p(self.weight);
        let b = s.p(self.bias);
        s.graph.dense(x, w, Some(b), self.groups)
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones(vec![channels])),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: store.add_buffer(
                format!("{name}.running_mean"),
                Tensor::zeros(vec![channels]),
            ),
            running_var: store
                .add_buffer(format!("{name}.running_var"), Tensor::ones(vec![channels])),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.p(self.gamma);
        let beta = s.p(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm(x, gamma, beta, BnMode::Train, BN_EPS)?;
                if let Some(stats) = stats {
                    s.record_bn(BnUpdate {
                        mean: self.running_mean,
                        var: self.running_var,
                        stats,
                    });
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = s.buffer(self.running_mean).data();
                let var = s.buffer(self.running_var).data();
                let (y, _) =
                    s.graph
                        .batch_norm(x, gamma, beta, BnMode::Eval { mean, var }, BN_EPS)?;
                Ok(y)
            }
        }
    }
}
