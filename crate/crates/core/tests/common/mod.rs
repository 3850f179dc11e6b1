#![allow(dead_code)]

use msti_core::msti::{Classifier, MstiConfig, SplitAttentionBlock, Stage, Variant};
use msti_core::substrate::{
    BnMode, ConvSpec, Graph, Init, Mode, ParamKind, ParamStore, PoolKind, Session, Tensor, Var,
};
use msti_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Builds `sum(f(inputs) * r)` for a fixed random projection `r`, so that any
/// output shape yields a scalar with a nontrivial upstream gradient.
fn projected_loss<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    proj_seed: u64,
    track: bool,
) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if track {
                g.variable(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let out = f(&mut g, &vars)?;
    let shape = g.shape(out).to_vec();
    let r = random_tensor(&mut rng(proj_seed), &shape);
    let rv = g.constant(r);
    let prod = g.mul(out, rv)?;
    let loss = g.sum(prod);
    Ok((g, vars, loss))
}

/// Norm-wise relative error between analytic and central-difference
/// gradients of every input: `|a - n| / max(|a| + |n|, 1e-12)`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], proj_seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, vars, loss) = projected_loss(&f, inputs, proj_seed, true)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = vec![0.0; input.numel()];
        for (j, num) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut perturbed = inputs.to_vec();
                perturbed[i].data_mut()[j] += delta;
                let (g, _, loss) = projected_loss(&f, &perturbed, proj_seed, false)?;
                Ok(g.value(loss).data()[0])
            };
            *num = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / (na + nn).max(1e-12));
    }
    Ok(worst)
}

/// Brute-force grouped 1-D cross-correlation.
pub fn conv1d_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let (bs, cin, l) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, cin_g, kw) = (w.dim(0), w.dim(1), w.dim(2));
    let lout = (l + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    let mut out = vec![0.0; bs * cout * lout];
    for bi in 0..bs {
        for oc in 0..cout {
            for o in 0..lout {
                let mut acc = b[oc];
                for icl in 0..cin_g {
                    let ic = (oc / cout_g) * cin_g + icl;
                    let _ = cin;
                    for k in 0..kw {
                        let p = (o * stride + k) as isize - pad as isize;
                        if p >= 0 && (p as usize) < l {
                            acc += w.at3(oc, icl, k) * x.at3(bi, ic, p as usize);
                        }
                    }
                }
                out[(bi * cout + oc) * lout + o] = acc;
            }
        }
    }
    Tensor::new(vec![bs, cout, lout], out).unwrap()
}

/// Relative gradient error of every differentiable op on random shapes
/// drawn from `seed`.
pub fn op_gradchecks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(100 + seed);
    let b = r.random_range(1..=2);
    let c = 2 * r.random_range(1..=2);
    let l = r.random_range(6..=16);
    let x = random_tensor(&mut r, &[b, c, l]);
    vec![
        ("conv1d", {
            let groups = if seed.is_multiple_of(2) { 1 } else { 2 };
            let cout = 2 * r.random_range(1..=2);
            let w = random_tensor(&mut r, &[cout, c / groups, 3]);
            let bias = random_tensor(&mut r, &[cout]);
            let stride = 1 + (seed as usize % 2);
            gradcheck(
                |g, v| {
                    g.conv1d(
                        v[0],
                        v[1],
                        Some(v[2]),
                        ConvSpec {
                            stride,
                            padding: 1,
                            groups,
                        },
                    )
                },
                &[x.clone(), w, bias],
                seed,
            )
            .unwrap()
        }),
        (
            "pool_avg",
            gradcheck(
                |g, v| g.pool1d(v[0], PoolKind::Avg, 3, 2),
                std::slice::from_ref(&x),
                seed,
            )
            .unwrap(),
        ),
        (
            "pool_max",
            gradcheck(
                |g, v| g.pool1d(v[0], PoolKind::Max, 2, 2),
                std::slice::from_ref(&x),
                seed,
            )
            .unwrap(),
        ),
        ("dense", {
            let xi = random_tensor(&mut r, &[b, 4]);
            let w = random_tensor(&mut r, &[6, 2]);
            let bias = random_tensor(&mut r, &[6]);
            gradcheck(
                |g, v| g.dense(v[0], v[1], Some(v[2]), 2),
                &[xi, w, bias],
                seed,
            )
            .unwrap()
        }),
        (
            "relu",
            gradcheck(|g, v| Ok(g.relu(v[0])), std::slice::from_ref(&x), seed).unwrap(),
        ),
        (
            "sigmoid",
            gradcheck(|g, v| Ok(g.sigmoid(v[0])), std::slice::from_ref(&x), seed).unwrap(),
        ),
        (
            "softmax",
            gradcheck(|g, v| g.softmax(v[0], 1), std::slice::from_ref(&x), seed).unwrap(),
        ),
        ("log", {
            let pos = x.map(|v| v.abs() + 0.5);
            gradcheck(|g, v| Ok(g.log(v[0])), &[pos], seed).unwrap()
        }),
        (
            "global_avg_pool",
            gradcheck(
                |g, v| g.global_avg_pool(v[0]),
                std::slice::from_ref(&x),
                seed,
            )
            .unwrap(),
        ),
        (
            "max_axis",
            gradcheck(|g, v| g.max_axis(v[0], 1), std::slice::from_ref(&x), seed).unwrap(),
        ),
        ("broadcast_mul", {
            let m = random_tensor(&mut r, &[b, 1, l]);
            gradcheck(|g, v| g.mul(v[0], v[1]), &[x.clone(), m], seed).unwrap()
        }),
        ("batch_norm", {
            let gamma = random_tensor(&mut r, &[c]);
            let beta = random_tensor(&mut r, &[c]);
            gradcheck(
                |g, v| {
                    g.batch_norm(v[0], v[1], v[2], BnMode::Train, 1e-5)
                        .map(|(y, _)| y)
                },
                &[x.clone(), gamma, beta],
                seed,
            )
            .unwrap()
        }),
        (
            "permute_concat_narrow",
            gradcheck(
                |g, v| {
                    let p = g.permute(v[0], vec![0, 2, 1])?;
                    let a = g.narrow(p, 1, 1, 3)?;
                    let bb = g.narrow(p, 1, 0, 2)?;
                    g.concat(&[a, bb], 1)
                },
                std::slice::from_ref(&x),
                seed,
            )
            .unwrap(),
        ),
        (
            "upsample_abs_pow",
            gradcheck(
                |g, v| {
                    let u = g.upsample(v[0], 2)?;
                    let a = g.abs(u);
                    let s = g.add_scalar(a, 0.1);
                    Ok(g.powf(s, 1.5))
                },
                std::slice::from_ref(&x),
                seed,
            )
            .unwrap(),
        ),
    ]
}

/// Input-gradient check of one block built from `cfg` (8 channels in and out).
pub fn block_gradcheck(cfg: &MstiConfig, seed: u64, mode: Mode) -> f64 {
    let mut store = ParamStore::<f64>::new();
    let block =
        SplitAttentionBlock::new(&mut store, &mut Init::new(seed), "b", cfg, 8, 8, 1).unwrap();
    let x = random_tensor(&mut rng(seed), &[2, 8, 8]);
    gradcheck(
        |g, v| {
            let mut s = Session::new(&store, mode);
            s.graph = std::mem::take(g);
            let y = block.forward(&mut s, v[0])?;
            *g = std::mem::take(&mut s.graph);
            Ok(y)
        },
        &[x],
        seed + 100,
    )
    .unwrap()
}

/// Parameter gradients of the full model in train mode against central
/// differences on a fixed projection of the logits.
pub fn model_param_gradcheck<M: Classifier<f64>>(mut model: M, seed: u64) -> f64 {
    let (c, w) = model.input_shape();
    let x = random_tensor(&mut rng(seed), &[3, c, w]);
    let r = random_tensor(&mut rng(seed + 1), &[3, model.num_classes()]);
    let loss = |m: &M| -> (f64, Vec<Option<Tensor<f64>>>) {
        let mut s = Session::new(m.store(), Mode::Train);
        let xv = s.graph.constant(x.clone());
        let y = m.forward(&mut s, xv).unwrap();
        let rv = s.graph.constant(r.clone());
        let p = s.graph.mul(y, rv).unwrap();
        let l = s.graph.sum(p);
        let grads = s.backward(l).unwrap();
        (s.graph.value(l).data()[0], grads)
    };
    let (_, analytic) = loss(&model);
    let h = 1e-5;
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for (pi, g) in analytic.iter().enumerate() {
        let Some(g) = g else { continue };
        let id = model
            .store()
            .ids(ParamKind::Param)
            .find(|i| i.index() == pi)
            .unwrap();
        for j in 0..g.numel() {
            model.store_mut().get_mut(id).data_mut()[j] += h;
            let up = loss(&model).0;
            model.store_mut().get_mut(id).data_mut()[j] -= 2.0 * h;
            let down = loss(&model).0;
            model.store_mut().get_mut(id).data_mut()[j] += h;
            let n = (up - down) / (2.0 * h);
            let a = g.data()[j];
            diff += (a - n).powi(2);
            na += a * a;
            nn += n * n;
        }
    }
    diff.sqrt() / (na.sqrt() + nn.sqrt()).max(1e-12)
}

/// Two-channel, eight-sample model with one 8-wide block.
pub fn tiny(variant: Variant) -> MstiConfig {
    MstiConfig {
        channels: 2,
        window: 8,
        num_classes: 3,
        cardinality: 2,
        radix: 2,
        stem_taps: 3,
        stem_channels: 4,
        stages: vec![Stage {
            blocks: 1,
            width: 8,
        }],
        variant,
        reduction: 4,
        min_hidden: 4,
    }
}
