use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::checkpoint::config_hash;
use crate::substrate::{
    Conv1d, ConvSpec, Dense, Init, ParamStore, PoolKind, Real, Session, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub window: usize,
    pub hidden: usize,
    pub taps: usize,
    /// Width of the sinusoidal step embedding.
    pub embed_dim: usize,
}

impl DenoiserConfig {
    pub fn new(channels: usize, window: usize) -> Self {
        Self {
            channels,
            window,
            hidden: 32,
            taps: 9,
            embed_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (path, v) in [
            ("synth.denoiser.channels", self.channels),
            ("synth.denoiser.window", self.window),
            ("synth.denoiser.hidden", self.hidden),
            ("synth.denoiser.taps", self.taps),
        ] {
            if v == 0 {
                return Err(Error::config(path, "must be >= 1"));
            }
        }
        if self.taps.is_multiple_of(2) {
            return Err(Error::config("synth.denoiser.taps", "must be odd"));
        }
        if self.window < 2 {
            return Err(Error::config("synth.denoiser.window", "must be >= 2"));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::config(
                "synth.denoiser.embed_dim",
                "must be a positive even number",
            ));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(&format!(
            "denoiser\n{}",
            toml::to_string(self).expect("config serializes")
        ))
    }
}

/// Sinusoidal embedding of diffusion step `t`, `[dim]`.
pub fn step_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half as f64);
        out.push((t as f64 * freq).sin());
    }
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half as f64);
        out.push((t as f64 * freq).cos());
    }
    out
}

/// Conditional encoder-decoder `D(x̃, f, t)`.
///
/// Noise branch: 9-tap conv on `x̃` plus the projected step embedding.
/// Feature branch: 1x1 projection of the fused statistics to `C` rows, then a
/// 9-tap conv. The branches are concatenated, fused by a third 9-tap conv and
/// max-pooled (2, 2); the decoder upsamples x2, applies a 9-tap conv and a
/// 1x1 output projection back to `C` channels.
#[derive(Clone, Debug)]
pub struct Denoiser<T: Real> {
    pub config: DenoiserConfig,
    pub store: ParamStore<T>,
    noise_conv: Conv1d,
    step_proj: Dense,
    feat_proj: Conv1d,
    feat_conv: Conv1d,
    fuse_conv: Conv1d,
    dec_conv: Conv1d,
    out_proj: Conv1d,
}

impl<T: Real> Denoiser<T> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let (c, h, k) = (config.channels, config.hidden, config.taps);
        let same = ConvSpec {
            stride: 1,
            padding: k / 2,
            groups: 1,
        };
        let point = ConvSpec::default();
        let noise_conv = Conv1d::new(&mut store, &mut init, "noise_conv", c, h, k, same, true);
        let step_proj = Dense::new(&mut store, &mut init, "step_proj", config.embed_dim, h, 1);
        let feat_proj = Conv1d::new(&mut store, &mut init, "feat_proj", 4 * c, c, 1, point, true);
        let feat_conv = Conv1d::new(&mut store, &mut init, "feat_conv", c, h, k, same, true);
        let fuse_conv = Conv1d::new(&mut store, &mut init, "fuse_conv", 2 * h, h, k, same, true);
        let dec_conv = Conv1d::new(&mut store, &mut init, "dec_conv", h, h, k, same, true);
        let out_proj = Conv1d::new(&mut store, &mut init, "out_proj", h, c, 1, point, true);
        Ok(Self {
            config,
            store,
            noise_conv,
            step_proj,
            feat_proj,
            feat_conv,
            fuse_conv,
            dec_conv,
            out_proj,
        })
    }

    /// `x_noisy: [B, C, W]`, `features: [B, 4C, W]`, one step per row.
    pub fn forward(
        &self,
        s: &mut Session<'_, T>,
        x_noisy: Var,
        features: Var,
        steps: &[usize],
    ) -> Result<Var> {
        let (c, w, h) = (self.config.channels, self.config.window, self.config.hidden);
        let xs = s.graph.shape(x_noisy).to_vec();
        if xs.len() != 3 || xs[1] != c || xs[2] != w {
            return Err(Error::shape(
                "denoiser",
                "noisy input",
                format!("[B, {c}, {w}]"),
                format!("{xs:?}"),
            ));
        }
        let b = xs[0];
        let fs = s.graph.shape(features).to_vec();
        if fs != [b, 4 * c, w] {
            return Err(Error::shape(
                "denoiser",
                "features",
                format!("[{b}, {}, {w}]", 4 * c),
                format!("{fs:?}"),
            ));
        }
        if steps.len() != b {
            return Err(Error::shape("denoiser", "step count", b, steps.len()));
        }
        let e = self.config.embed_dim;
        let emb: Vec<T> = steps
            .iter()
            .flat_map(|&t| step_embedding(t, e))
            .map(T::of)
            .collect();
        let emb = s.graph.constant(Tensor::new(vec![b, e], emb)?);
        let emb = self.step_proj.forward(s, emb)?;
        let emb = s.graph.reshape(emb, vec![b, h, 1])?;

        let n = self.noise_conv.forward(s, x_noisy)?;
        let n = s.graph.add(n, emb)?;
        let f = self.feat_proj.forward(s, features)?;
        let f = self.feat_conv.forward(s, f)?;
        let z = s.graph.concat(&[n, f], 1)?;
        let z = self.fuse_conv.forward(s, z)?;
        let z = s.graph.relu(z);
        let z = s.graph.pool1d(z, PoolKind::Max, 2, 2)?;

        let mut u = s.graph.upsample(z, 2)?;
        let len = s.graph.shape(u)[2];
        if len < w {
            let last = s.graph.narrow(u, 2, len - 1, 1)?;
            let mut parts = vec![u];
            parts.extend(std::iter::repeat_n(last, w - len));
            u = s.graph.concat(&parts, 2)?;
        }
        let u = self.dec_conv.forward(s, u)?;
        let u = s.graph.relu(u);
        self.out_proj.forward(s, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::Mode;

    #[test]
    fn output_matches_input_shape_for_odd_and_even_windows() {
        for w in [8, 9, 90] {
            let d = Denoiser::<f64>::new(DenoiserConfig::new(3, w), 0).unwrap();
            let mut s = Session::new(&d.store, Mode::Eval);
            let x = s.graph.constant(Tensor::zeros(vec![2, 3, w]));
            let f = s.graph.constant(Tensor::zeros(vec![2, 12, w]));
            let y = d.forward(&mut s, x, f, &[1, 50]).unwrap();
            assert_eq!(s.graph.shape(y), &[2, 3, w]);
        }
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let a = step_embedding(1, 16);
        let b = step_embedding(2, 16);
        assert_eq!(a.len(), 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
