use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{ParamKind, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub decay: DecayMode,
}

/// Where the weight-decay term enters the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    /// `θ − η (m̂/(√v̂+ε) + λθ)`.
    #[default]
    Decoupled,
    /// `θ − η (m̂ + λθ)/(√v̂+ε)`. With `g = 0` the decay is scaled by `1/ε`,
    /// so any parameter with an exactly-zero gradient is blown up.
    Coupled,
}

fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_wd() -> f64 {
    1e-4
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            weight_decay: d_wd(),
            decay: DecayMode::default(),
        }
    }
}

/// Moment estimates for every trainable entry of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |_| None;
        let n = store.len();
        let mut m: Vec<Option<Tensor<T>>> = (0..n).map(zeros).collect();
        let mut v = m.clone();
        for id in store.ids(ParamKind::Param) {
            let shape = store.get(id).shape().to_vec();
            m[id.index()] = Some(Tensor::zeros(shape.clone()));
            v[id.index()] = Some(Tensor::zeros(shape));
        }
        Self { config, m, v, t: 0 }
    }

    /// One bias-corrected update (see [`DecayMode`]). Gradients are indexed by
    /// parameter id; `None` entries (buffers) are skipped. Non-finite
    /// gradients abort before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape(
                "adam_step",
                "gradient count",
                store.len(),
                grads.len(),
            ));
        }
        for id in store.ids(ParamKind::Param).collect::<Vec<_>>() {
            if let Some(g) = &grads[id.index()] {
                if g.shape() != store.get(id).shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("gradient of {}", store.entries()[id.index()].name),
                        format!("{:?}", store.get(id).shape()),
                        format!("{:?}", g.shape()),
                    ));
                }
                g.check_finite(&format!("gradient of {}", store.entries()[id.index()].name))?;
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids(ParamKind::Param).collect();
        for id in ids {
            let Some(g) = &grads[id.index()] else {
                continue;
            };
            let m = self.m[id.index()].as_mut().expect("moment for param");
            let v = self.v[id.index()].as_mut().expect("moment for param");
            let theta = store.get_mut(id);
            for (((p, &gi), mi), vi) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi.as_f64();
                let mn = c.beta1 * mi.as_f64() + (1.0 - c.beta1) * gi;
                let vn = c.beta2 * vi.as_f64() + (1.0 - c.beta2) * gi * gi;
                *mi = T::of(mn);
                *vi = T::of(vn);
                let mh = mn / bc1;
                let vh = vn / bc2;
                let th = p.as_f64();
                let delta = match c.decay {
                    DecayMode::Decoupled => mh / (vh.sqrt() + c.eps) + c.weight_decay * th,
                    DecayMode::Coupled => (mh + c.weight_decay * th) / (vh.sqrt() + c.eps),
                };
                *p = T::of(th - c.lr * delta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(theta: f64, g: f64, wd: f64) -> f64 {
        one_with(theta, g, wd, DecayMode::Decoupled)
    }

    fn one_with(theta: f64, g: f64, wd: f64, decay: DecayMode) -> f64 {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_param("w", Tensor::scalar(theta));
        let mut cfg = AdamConfig::with_lr(1e-3);
        cfg.weight_decay = wd;
        cfg.decay = decay;
        let mut st = AdamState::new(&store, cfg);
        st.step(&mut store, &[Some(Tensor::scalar(g))]).unwrap();
        assert_eq!(st.t, 1);
        store.get(id).data()[0]
    }

    #[test]
    fn first_step_hand_value() {
        // m̂ = g, v̂ = g², so the step is η·g/(|g|+ε) ≈ η.
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((one(1.0, 0.5, 0.0) - expected).abs() < 1e-15);
        assert!((one(1.0, 0.5, 0.0) - 0.999).abs() < 1e-8);
        assert_eq!(
            one_with(1.0, 0.5, 0.0, DecayMode::Coupled),
            one(1.0, 0.5, 0.0)
        );
    }

    #[test]
    fn zero_gradient_and_decay() {
        assert_eq!(one(1.0, 0.0, 0.0), 1.0);
        assert!(one(1.0, 0.0, 1e-4) < 1.0);
        assert!((one(1.0, 0.0, 1e-4) - (1.0 - 1e-7)).abs() < 1e-15);
        assert!(one_with(1.0, 0.0, 1e-4, DecayMode::Coupled) < 1.0);
        assert_eq!(one_with(1.0, 0.0, 0.0, DecayMode::Coupled), 1.0);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_param("w", Tensor::scalar(1.0));
        let mut st = AdamState::new(&store, AdamConfig::with_lr(1e-3));
        let e = st
            .step(&mut store, &[Some(Tensor::scalar(f64::NAN))])
            .unwrap_err();
        assert!(e.to_string().contains("gradient of w"), "{e}");
        assert_eq!(store.get(id).data()[0], 1.0);
        assert_eq!(st.t, 0);
    }
}
