mod common;

use common::{gradcheck, random_tensor, rng};
use msti_core::ingest::{
    make_synthetic_dataset, SplitFractions, SplitPolicy, SyntheticSpec, WindowedDataset,
};
use msti_core::msti::{Classifier, Msti, MstiConfig, Stage, Variant};
use msti_core::substrate::{Graph, ParamStore, Tensor};
use msti_core::train::{
    adapt_weights, fit, loss_ce, loss_focal, loss_slnll, loss_values, total_loss, AdamConfig,
    AdamState, FitSchedule, FocalParams, LossMode, LossWeights,
};
use msti_core::Error;
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-12;

fn tiny_config() -> MstiConfig {
    MstiConfig {
        channels: 3,
        window: 16,
        num_classes: 3,
        cardinality: 2,
        radix: 2,
        stem_taps: 3,
        stem_channels: 8,
        stages: vec![Stage {
            blocks: 1,
            width: 8,
        }],
        variant: Variant::Full,
        reduction: 4,
        min_hidden: 4,
    }
}

fn tiny_data(seed: u64) -> WindowedDataset {
    let spec = SyntheticSpec::balanced(3, 3, 16, 12, seed);
    make_synthetic_dataset(&spec, SplitPolicy::Stratified, SplitFractions::default()).unwrap()
}

fn random_probs(seed: u64, b: usize, k: usize) -> Tensor<f64> {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(b * k);
    for _ in 0..b {
        let row: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    Tensor::new(vec![b, k], data).unwrap()
}

fn eval(
    f: impl FnOnce(
        &mut Graph<f64>,
        msti_core::substrate::Var,
    ) -> msti_core::Result<msti_core::substrate::Var>,
    p: &Tensor<f64>,
) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(p.clone());
    let out = f(&mut g, v).unwrap();
    g.value(out).data()[0]
}

#[test]
fn focal_with_unit_alpha_zero_gamma_is_ce() {
    for seed in 0..10 {
        let p = random_probs(seed, 5, 4);
        let y = [0, 3, 1, 2, 2];
        let ce = eval(|g, v| loss_ce(g, v, &y), &p);
        let fl = eval(|g, v| loss_focal(g, v, &y, 1.0, 0.0), &p);
        assert!((ce - fl).abs() < TOL, "seed {seed}: {ce} vs {fl}");
    }
}

#[test]
fn zero_smoothing_is_ce() {
    for seed in 0..10 {
        let p = random_probs(seed, 6, 3);
        let y = [0, 1, 2, 2, 1, 0];
        let ce = eval(|g, v| loss_ce(g, v, &y), &p);
        let sl = eval(|g, v| loss_slnll(g, v, &y, 0.0), &p);
        assert!((ce - sl).abs() < TOL);
    }
}

#[test]
fn combination_weights_examples() {
    let p = random_probs(0, 1, 2);
    let ones = |w: [f64; 3], parts: [f64; 3]| {
        let mut g = Graph::<f64>::new();
        let v: Vec<_> = parts
            .iter()
            .map(|&x| g.constant(Tensor::scalar(x)))
            .collect();
        let t = total_loss(&mut g, v[0], v[1], v[2], &LossWeights::fixed(w)).unwrap();
        g.value(t).data()[0]
    };
    assert!((ones([0.3, 0.4, 0.3], [1.0, 2.0, 3.0]) - 2.0).abs() < 1e-12);
    assert!((ones([0.15, 0.7, 0.15], [1.0, 1.0, 1.0]) - 1.0).abs() < 1e-12);
    let y = [1];
    let ce = eval(|g, v| loss_ce(g, v, &y), &p);
    let parts = loss_values(
        p.data(),
        2,
        &y,
        &FocalParams::default(),
        &LossWeights::ce_only(),
    )
    .unwrap();
    assert!((parts.total - ce).abs() < TOL);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let y = [2, 0, 1];
    let fp = FocalParams::default();
    for seed in 0..5 {
        let logits = random_tensor(&mut rng(seed), &[3, 3]);
        let w = LossWeights::fixed([0.2, 0.5, 0.3]);
        let err = gradcheck(
            |g, v| {
                let p = g.softmax(v[0], 1)?;
                let sl = loss_slnll(g, p, &y, fp.smoothing)?;
                let fl = loss_focal(g, p, &y, fp.alpha, fp.gamma)?;
                let ce = loss_ce(g, p, &y)?;
                total_loss(g, sl, fl, ce, &w)
            },
            &[logits],
            seed,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn invalid_target_is_rejected() {
    let p = random_probs(1, 2, 3);
    let mut g = Graph::new();
    let v = g.constant(p);
    assert!(matches!(
        loss_ce(&mut g, v, &[0, 3]),
        Err(Error::InvalidArgument { .. })
    ));
}

#[test]
fn ce_weights_match_pure_ce_trajectory() {
    let data = tiny_data(4);
    let run = |loss: LossMode| {
        let mut m = Msti::<f64>::new(tiny_config(), 9).unwrap();
        let mut sched = FitSchedule::new(2, 8, 0.01, 3);
        sched.loss = loss;
        let r = fit(&mut m, &data, &sched).unwrap();
        (r, m)
    };
    let (ra, ma) = run(LossMode::CeOnly);
    let (rb, mb) = run(LossMode::Fixed {
        weights: [0.0, 0.0, 1.0],
    });
    assert_eq!(ra.steps, rb.steps);
    for (a, b) in ra.records.iter().zip(&rb.records) {
        assert_eq!(a.loss_ce, b.loss_ce);
        assert_eq!(a.loss_total, b.loss_total);
        assert_eq!(a.val_acc, b.val_acc);
    }
    for (a, b) in ma.store().entries().iter().zip(mb.store().entries()) {
        assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
    }
}

#[test]
fn fit_is_seed_deterministic_and_logs_weights() {
    let data = tiny_data(5);
    let run = || {
        let mut m = Msti::<f32>::new(tiny_config(), 1).unwrap();
        let mut sched = FitSchedule::new(3, 8, 0.01, 2);
        sched.loss = LossMode::adaptive(0.5);
        fit(&mut m, &data, &sched).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.records[0].omega, LossWeights::uniform().w);
    for pair in a.records.windows(2) {
        let expect = adapt_weights(&LossWeights::uniform(), pair[0].train_acc, 0.5).w;
        assert_eq!(pair[1].omega, expect);
    }
    assert!(a.records.iter().all(|r| r.loss_total.is_finite()));
}

#[test]
fn fit_rejects_empty_validation() {
    let mut data = tiny_data(6);
    data.splits.val.clear();
    let mut m = Msti::<f32>::new(tiny_config(), 1).unwrap();
    let err = fit(&mut m, &data, &FitSchedule::new(1, 8, 0.01, 0)).unwrap_err();
    assert!(matches!(err, Error::Empty(_)), "{err}");
}

#[test]
fn adam_step_hand_value() {
    let mut store = ParamStore::<f64>::new();
    store.add_param("theta", Tensor::scalar(1.0));
    let cfg = AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::with_lr(1e-3)
    };
    let mut adam = AdamState::new(&store, cfg);
    adam.step(&mut store, &[Some(Tensor::scalar(0.5))]).unwrap();
    // m̂ = 0.5, v̂ = 0.25 -> step = lr * 0.5 / (0.5 + 1e-8)
    let expect = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
    assert!((store.entries()[0].tensor.data()[0] - expect).abs() < 1e-15);
    assert!((store.entries()[0].tensor.data()[0] - 0.999).abs() < 1e-6);
}

#[test]
fn adapt_weights_grid() {
    let n = 100;
    for i in 0..n {
        let tau = i as f64 / (n - 1) as f64;
        let mut prev = f64::NEG_INFINITY;
        for j in 0..n {
            let acc = j as f64 / (n - 1) as f64;
            let w = adapt_weights(&LossWeights::uniform(), acc, tau).w;
            assert_eq!(w[0], w[2]);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(w[1] >= prev);
            prev = w[1];
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_invariant_to_consistent_relabeling(seed in 0u64..1000, shift in 1usize..4) {
        let k = 4;
        let p = random_probs(seed, 3, k);
        let y = [0usize, 2, 3];
        let perm = |c: usize| (c + shift) % k;
        let mut rolled = vec![0.0; p.numel()];
        for (r, row) in p.data().chunks(k).enumerate() {
            for (c, &v) in row.iter().enumerate() {
                rolled[r * k + perm(c)] = v;
            }
        }
        let y2: Vec<usize> = y.iter().map(|&c| perm(c)).collect();
        let w = LossWeights::fixed([0.2, 0.3, 0.5]);
        let fp = FocalParams::default();
        let a = loss_values(p.data(), k, &y, &fp, &w).unwrap();
        let b = loss_values(&rolled, k, &y2, &fp, &w).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-12);
        prop_assert!((a.sl - b.sl).abs() < 1e-12);
    }

    #[test]
    fn graph_and_value_losses_agree(seed in 0u64..1000) {
        let p = random_probs(seed, 4, 3);
        let y = [2usize, 1, 0, 1];
        let fp = FocalParams::default();
        let w = LossWeights::fixed([0.25, 0.5, 0.25]);
        let mut g = Graph::new();
        let v = g.constant(p.clone());
        let sl = loss_slnll(&mut g, v, &y, fp.smoothing).unwrap();
        let fl = loss_focal(&mut g, v, &y, fp.alpha, fp.gamma).unwrap();
        let ce = loss_ce(&mut g, v, &y).unwrap();
        let t = total_loss(&mut g, sl, fl, ce, &w).unwrap();
        let parts = loss_values(p.data(), 3, &y, &fp, &w).unwrap();
        prop_assert!((g.value(t).data()[0] - parts.total).abs() < 1e-12);
    }
}
