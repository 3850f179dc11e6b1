//! Split-attention block.
//!
//! Channel layout after the grouped convolution is radix-major: split
//! `(i, k)` (radix index `i`, cardinal group `k`) occupies channels
//! `[(i*K + k) * C/K, (i*K + k + 1) * C/K)` of the `R*C`-channel map, so
//! viewing it as `[B, R, C, S]` puts radix on axis 1 and leaves every
//! cardinal group contiguous inside `C`.

use crate::error::{Error, Result};
use crate::substrate::{
    BatchNorm, Conv1d, ConvSpec, Dense, Graph, Init, ParamStore, Real, Session, Var,
};

use super::config::{MstiConfig, Variant};

/// Elementwise sum of radix splits sharing one shape.
pub fn cardinal_sum<T: Real>(g: &mut Graph<T>, splits: &[Var]) -> Result<Var> {
    let (&first, rest) = splits
        .split_first()
        .ok_or_else(|| Error::invalid("cardinal_sum", "no splits"))?;
    let shape = g.shape(first).to_vec();
    let mut acc = first;
    for &s in rest {
        if g.shape(s) != shape.as_slice() {
            return Err(Error::shape(
                "cardinal_sum",
                "split shape",
                format!("{shape:?}"),
                format!("{:?}", g.shape(s)),
            ));
        }
        acc = g.add(acc, s)?;
    }
    Ok(acc)
}

/// Per-channel mean over the sequence axis: `[B, C, S] -> [B, C]`.
pub fn channel_stats<T: Real>(g: &mut Graph<T>, u: Var) -> Result<Var> {
    g.global_avg_pool(u)
}

/// Turns attention logits `[B, R*C]` (grouped per cardinal group, each group
/// laid out `[R, C/K]`) into radix weights `[B, R, C, 1]`: softmax over the
/// radix axis when `R > 1`, sigmoid when `R = 1`.
pub fn radix_attention<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    cardinality: usize,
    radix: usize,
) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || !shape[1].is_multiple_of(cardinality * radix) {
        return Err(Error::shape(
            "radix_attention",
            "logits",
            format!("[B, multiple of K*R={}]", cardinality * radix),
            format!("{shape:?}"),
        ));
    }
    let (b, total) = (shape[0], shape[1]);
    let per = total / (cardinality * radix);
    if radix == 1 {
        let a = g.sigmoid(logits);
        return g.reshape(a, vec![b, 1, total, 1]);
    }
    let x = g.reshape(logits, vec![b, cardinality, radix, per])?;
    let a = g.softmax(x, 2)?;
    let a = g.permute(a, vec![0, 2, 1, 3])?;
    g.reshape(a, vec![b, radix, cardinality * per, 1])
}

/// Gate `[N, 1, S]` from channel-average and channel-max descriptors of
/// `f: [N, C, S]` through a 3-tap convolution and a sigmoid.
pub fn spatial_attention<T: Real>(s: &mut Session<'_, T>, conv: &Conv1d, f: Var) -> Result<Var> {
    let avg = s.graph.mean_axis(f, 1)?;
    let max = s.graph.max_axis(f, 1)?;
    let desc = s.graph.concat(&[avg, max], 1)?;
    let logits = conv.forward(s, desc)?;
    Ok(s.graph.sigmoid(logits))
}

/// Intermediate values exposed for inspection.
pub struct BlockTrace {
    pub out: Var,
    /// `[B, R, C, 1]` when the temporal path is active.
    pub radix_weights: Option<Var>,
    /// `[B*R*K, 1, S]` when the spatial path is active.
    pub spatial_map: Option<Var>,
    /// Fused representation `V` before the 1x1 unification, `[B, C, S]`.
    pub fused: Var,
}

#[derive(Clone, Debug)]
pub struct SplitAttentionBlock {
    pub in_channels: usize,
    pub width: usize,
    pub cardinality: usize,
    pub radix: usize,
    pub stride: usize,
    pub variant: Variant,
    pub conv: Conv1d,
    pub bn: BatchNorm,
    pub spatial: Option<Conv1d>,
    pub attention: Option<(Dense, Dense)>,
    pub unify: Conv1d,
    pub unify_bn: BatchNorm,
    pub shortcut: Option<(Conv1d, BatchNorm)>,
}

impl SplitAttentionBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cfg: &MstiConfig,
        in_channels: usize,
        width: usize,
        stride: usize,
    ) -> Result<Self> {
        let (k, r) = (cfg.cardinality, cfg.radix);
        if !in_channels.is_multiple_of(k * r) || !width.is_multiple_of(k * r) {
            return Err(Error::config(
                name.to_string(),
                format!(
                    "channels {in_channels}->{width} must be divisible by K*R = {}",
                    k * r
                ),
            ));
        }
        let conv = Conv1d::new(
            store,
            init,
            &format!("{name}.conv"),
            in_channels,
            width * r,
            3,
            ConvSpec {
                stride,
                padding: 1,
                groups: k * r,
            },
            true,
        );
        let bn = BatchNorm::new(store, &format!("{name}.bn"), width * r);
        let spatial = cfg.variant.spatial().then(|| {
            Conv1d::new(
                store,
                init,
                &format!("{name}.spatial"),
                2,
                1,
                3,
                ConvSpec {
                    stride: 1,
                    padding: 1,
                    groups: 1,
                },
                true,
            )
        });
        let attention = cfg.variant.temporal().then(|| {
            let hidden = cfg.hidden(width);
            (
                Dense::new(store, init, &format!("{name}.fc1"), width, hidden, k),
                Dense::new(store, init, &format!("{name}.fc2"), hidden, width * r, k),
            )
        });
        let unify = Conv1d::new(
            store,
            init,
            &format!("{name}.unify"),
            width,
            width,
            1,
            ConvSpec::default(),
            true,
        );
        let unify_bn = BatchNorm::new(store, &format!("{name}.unify_bn"), width);
        let shortcut = (in_channels != width || stride != 1).then(|| {
            (
                Conv1d::new(
                    store,
                    init,
                    &format!("{name}.shortcut"),
                    in_channels,
                    width,
                    1,
                    ConvSpec {
                        stride,
                        padding: 0,
                        groups: 1,
                    },
                    true,
                ),
                BatchNorm::new(store, &format!("{name}.shortcut_bn"), width),
            )
        });
        Ok(Self {
            in_channels,
            width,
            cardinality: k,
            radix: r,
            stride,
            variant: cfg.variant,
            conv,
            bn,
            spatial,
            attention,
            unify,
            unify_bn,
            shortcut,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(s, x)?.out)
    }

    pub fn forward_traced<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<BlockTrace> {
        let xs = s.graph.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != self.in_channels {
            return Err(Error::shape(
                "split_attention_block",
                "input channels",
                self.in_channels,
                format!("{xs:?}"),
            ));
        }
        let (b, c, k, r) = (xs[0], self.width, self.cardinality, self.radix);

        let u = self.conv.forward(s, x)?;
        let u = self.bn.forward(s, u)?;
        let u = s.graph.relu(u);
        let len = s.graph.shape(u)[2];

        let mut spatial_map = None;
        let u4 = if let Some(conv) = &self.spatial {
            let groups = s.graph.reshape(u, vec![b * r * k, c / k, len])?;
            let m = spatial_attention(s, conv, groups)?;
            spatial_map = Some(m);
            let gated = s.graph.mul(groups, m)?;
            s.graph.reshape(gated, vec![b, r, c, len])?
        } else {
            s.graph.reshape(u, vec![b, r, c, len])?
        };

        let splits = (0..r)
            .map(|i| s.graph.narrow(u4, 1, i, 1))
            .collect::<Result<Vec<_>>>()?;
        let summed = cardinal_sum(&mut s.graph, &splits)?;
        let u_hat = s.graph.reshape(summed, vec![b, c, len])?;

        let mut radix_weights = None;
        let fused = if let Some((fc1, fc2)) = &self.attention {
            let d = channel_stats(&mut s.graph, u_hat)?;
            let h = fc1.forward(s, d)?;
            let h = s.graph.relu(h);
            let logits = fc2.forward(s, h)?;
            let a = radix_attention(&mut s.graph, logits, k, r)?;
            radix_weights = Some(a);
            let weighted = s.graph.mul(u4, a)?;
            let v = s.graph.sum_axis(weighted, 1)?;
            s.graph.reshape(v, vec![b, c, len])?
        } else {
            s.graph.scale(u_hat, 1.0 / r as f64)
        };

        let y = self.unify.forward(s, fused)?;
        let y = self.unify_bn.forward(s, y)?;
        let shortcut = match &self.shortcut {
            Some((conv, bn)) => {
                let sc = conv.forward(s, x)?;
                bn.forward(s, sc)?
            }
            None => x,
        };
        let sum = s.graph.add(y, shortcut)?;
        Ok(BlockTrace {
            out: s.graph.relu(sum),
            radix_weights,
            spatial_map,
            fused,
        })
    }
}
