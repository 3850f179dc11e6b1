//! Parallel vs sequential kernels. Both paths run in the same build via
//! `par::force_sequential`; build with `--no-default-features` to drop rayon.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use msti_core::msti::{Classifier, Msti, MstiConfig};
use msti_core::par;
use msti_core::substrate::{ConvSpec, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

const PATHS: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn conv1d(c: &mut Criterion) {
    let x = Arc::new(random(&[32, 64, 90], 0));
    let w = Arc::new(random(&[64, 32, 3], 1));
    let spec = ConvSpec {
        stride: 1,
        padding: 1,
        groups: 2,
    };
    let mut group = c.benchmark_group("conv1d_fwd_bwd");
    for (name, seq) in PATHS {
        par::force_sequential(seq);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
                let y = g.conv1d(xv, wv, None, spec).unwrap();
                let l = g.sum(y);
                black_box(g.backward(l).unwrap());
            })
        });
    }
    par::force_sequential(false);
    group.finish();
}

fn msti_forward(c: &mut Criterion) {
    let model = Msti::<f32>::new(MstiConfig::wisdm(), 0).unwrap();
    let mut group = c.benchmark_group("msti_forward");
    group.sample_size(20);
    for batch in [1, 32] {
        let x = random(&[batch, 3, 90], 2);
        for (name, seq) in PATHS {
            par::force_sequential(seq);
            group.bench_with_input(BenchmarkId::new(name, batch), &x, |b, x| {
                b.iter(|| black_box(model.logits(x.clone()).unwrap()))
            });
        }
    }
    par::force_sequential(false);
    group.finish();
}

criterion_group!(benches, conv1d, msti_forward);
criterion_main!(benches);
