use msti_core::ingest::{
    make_synthetic_dataset, SplitFractions, SplitPolicy, SyntheticSpec, WindowedDataset,
};
use msti_core::substrate::Tensor;
use msti_core::synth::{
    balance_plan, extract_features, generate, l_rec, noising, pretrain, synthesize_class, Denoiser,
    DenoiserConfig, DiffusionSchedule, PretrainConfig,
};
use proptest::prelude::*;

const MC_DRAWS: usize = 10_000;
const MC_REL_TOL: f64 = 0.05;

fn toy(per_class: Vec<usize>, window: usize, seed: u64) -> WindowedDataset {
    let mut spec = SyntheticSpec::balanced(per_class.len(), 2, window, 0, seed);
    spec.per_class = per_class;
    make_synthetic_dataset(&spec, SplitPolicy::Stratified, SplitFractions::default()).unwrap()
}

#[test]
fn noising_of_zero_signal_has_scaled_unit_variance() {
    let sched = DiffusionSchedule::default();
    let x = Tensor::<f64>::zeros(vec![1, MC_DRAWS]);
    for t in [1, 10, 25, 50] {
        let beta = sched.beta(t).unwrap();
        let (xt, eps) = noising(&x, t, &sched, t as u64).unwrap();
        let n = MC_DRAWS as f64;
        let mean = xt.data().iter().sum::<f64>() / n;
        let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expect = 1.0 - beta;
        if expect > 0.0 {
            assert!(
                (var - expect).abs() <= MC_REL_TOL * expect,
                "t {t}: {var} vs {expect}"
            );
        }
        for (a, e) in xt.data().iter().zip(eps.data()) {
            assert!((a - e * (1.0 - beta).sqrt()).abs() < 1e-15);
        }
    }
}

#[test]
fn noising_limits() {
    let x = Tensor::<f64>::from_f64(vec![2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
    let keep = DiffusionSchedule { beta: vec![1.0] };
    let (xt, _) = noising(&x, 1, &keep, 3).unwrap();
    assert_eq!(xt, x);
    let wipe = DiffusionSchedule { beta: vec![1e-300] };
    let (xt, eps) = noising(&x, 1, &wipe, 3).unwrap();
    for (a, e) in xt.data().iter().zip(eps.data()) {
        assert!((a - e).abs() < 1e-12);
    }
    assert!(noising(&x, 0, &keep, 0).is_err());
    assert!(noising(&x, 2, &keep, 0).is_err());
}

#[test]
fn l_rec_examples() {
    let x = [0.5, -1.0, 2.0, 3.0];
    assert_eq!(l_rec(&x, &x).unwrap(), 0.0);
    let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
    assert!((l_rec(&shifted, &x).unwrap() - 1.0).abs() < 1e-12);
    assert!(l_rec(&x[..2], &x).is_err());
}

#[test]
fn feature_examples() {
    let x = Tensor::<f64>::from_f64(vec![2, 3], &[-1.0, 0.0, 1.0, 2.0, 2.0, 2.0]).unwrap();
    let f = extract_features(&x).unwrap();
    assert_eq!(f.mean, vec![0.0, 2.0]);
    assert!(f.skewness[0].abs() < 1e-12);
    assert!(f.zscore.data()[3..].iter().all(|&z| z == 0.0));
    assert_eq!(f.fused.shape(), &[8, 3]);
    let one = Tensor::<f64>::from_f64(vec![1, 2], &[1.0, 5.0]).unwrap();
    let f = extract_features(&one).unwrap();
    assert!((f.zscore.data()[1] - 1.0).abs() < 1e-12);
}

#[test]
fn generation_is_deterministic_and_count_zero_is_empty() {
    let cfg = DenoiserConfig {
        hidden: 8,
        ..DenoiserConfig::new(2, 12)
    };
    let den = Denoiser::<f32>::new(cfg, 1).unwrap();
    let sched = DiffusionSchedule::default();
    let x = Tensor::<f32>::from_f64(
        vec![2, 12],
        &(0..24).map(|i| (i as f64 * 0.3).sin()).collect::<Vec<_>>(),
    )
    .unwrap();
    let f = extract_features(&x).unwrap();
    assert!(generate(&den, &sched, &f, 0, 5, 0).unwrap().is_empty());
    let a = generate(&den, &sched, &f, 3, 5, 1).unwrap();
    assert_eq!(a, generate(&den, &sched, &f, 3, 5, 1).unwrap());
    assert_ne!(a, generate(&den, &sched, &f, 3, 6, 1).unwrap());
    // a sample does not depend on how many others are drawn alongside it
    assert_eq!(a[..2], generate(&den, &sched, &f, 2, 5, 1).unwrap()[..]);
}

#[test]
fn pretraining_reduces_reconstruction_loss_and_conditions_means() {
    let data = toy(vec![30, 30], 24, 2);
    let sched = DiffusionSchedule::default();
    let mut den = Denoiser::<f32>::new(DenoiserConfig::new(2, 24), 3).unwrap();
    let cfg = PretrainConfig {
        steps: 200,
        seed: 4,
        ..PretrainConfig::default()
    };
    let trace = pretrain(&mut den, &data, &sched, &cfg).unwrap();
    let head = trace[..10].iter().sum::<f64>() / 10.0;
    let tail = trace[trace.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail <= 0.5 * head, "L_rec {head} -> {tail}");

    let out = synthesize_class(&den, &sched, &data, 1, 20, 5, 0).unwrap();
    assert_eq!(out.len(), 20);
    assert!(out.iter().all(|w| w.synthetic && w.label == 1));
    for c in 0..2 {
        let gen = out.iter().map(|w| {
            w.values.data()[c * 24..(c + 1) * 24]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>()
                / 24.0
        });
        let gen_mean = gen.sum::<f64>() / out.len() as f64;
        let real = data.train_windows_of(1);
        let cond_mean = real
            .iter()
            .map(|w| {
                w.values.data()[c * 24..(c + 1) * 24]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>()
                    / 24.0
            })
            .sum::<f64>()
            / real.len() as f64;
        assert!(
            (gen_mean - cond_mean).abs() <= 0.2 * cond_mean.abs(),
            "channel {c}: {gen_mean} vs {cond_mean}"
        );
    }
}

#[test]
fn balance_plan_tops_up_minority() {
    let data = toy(vec![40, 4, 20], 8, 0);
    let counts = data.class_counts_in(&data.splits.train);
    let plan = balance_plan(&data);
    let max = *counts.iter().max().unwrap();
    for (n, p) in counts.iter().zip(&plan) {
        assert_eq!(n + p, max);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn features_are_shift_and_scale_consistent(vals in proptest::collection::vec(-5.0f64..5.0, 8), shift in -3.0f64..3.0, scale in 0.5f64..4.0) {
        let x = Tensor::<f64>::from_f64(vec![1, 8], &vals).unwrap();
        let y = x.map(|v| v * scale + shift);
        let fx = extract_features(&x).unwrap();
        let fy = extract_features(&y).unwrap();
        prop_assume!(fx.std[0] > 1e-3);
        prop_assert!((fy.mean[0] - (fx.mean[0] * scale + shift)).abs() < 1e-9);
        prop_assert!((fy.std[0] - fx.std[0] * scale).abs() < 1e-9);
        for (a, b) in fx.zscore.data().iter().zip(fy.zscore.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!((fx.skewness[0] - fy.skewness[0]).abs() < 1e-9);
    }
}
