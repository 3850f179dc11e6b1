use msti_core::bench::{
    count_params, default_deadline_ms, latency_run, percentile, stream_replay, stream_step,
    LatencyConfig,
};
use msti_core::ingest::{window_count, SensorStream};
use msti_core::msti::{
    analytic_param_count, Classifier, Msti, MstiConfig, PlainCnn, PlainCnnConfig, Stage, Variant,
};
use msti_core::substrate::{Conv1d, ConvSpec, Dense, Init, ParamStore, Tensor};
use proptest::prelude::*;

fn small_config() -> MstiConfig {
    MstiConfig {
        channels: 3,
        window: 20,
        num_classes: 4,
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

fn stream(len: usize, channels: usize) -> SensorStream {
    SensorStream {
        subject: 0,
        channels,
        samples: (0..len * channels)
            .map(|i| (i as f32 * 0.01).sin())
            .collect(),
        labels: vec![0; len],
    }
}

#[test]
fn layer_param_counts() {
    let mut store = ParamStore::<f32>::new();
    let mut init = Init::new(0);
    Dense::new(&mut store, &mut init, "fc", 3, 2, 1);
    assert_eq!(store.num_params(), 8);
    let mut store = ParamStore::<f32>::new();
    Conv1d::new(
        &mut store,
        &mut init,
        "c",
        3,
        4,
        2,
        ConvSpec {
            stride: 1,
            padding: 0,
            groups: 1,
        },
        true,
    );
    assert_eq!(store.num_params(), 28);
}

#[test]
fn analytic_count_matches_built_models() {
    let mut radix1 = small_config();
    radix1.cardinality = 4;
    radix1.radix = 1;
    radix1.stages = vec![
        Stage {
            blocks: 2,
            width: 16,
        },
        Stage {
            blocks: 1,
            width: 32,
        },
    ];
    for cfg in [MstiConfig::wisdm(), small_config(), radix1] {
        let m = Msti::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(count_params(&m).unwrap().params, analytic_param_count(&cfg));
    }
    let cnn = PlainCnn::<f32>::new(PlainCnnConfig::new(3, 90, 6), 0);
    let expect = (3 * 32 * 5 + 32) + (32 * 64 * 5 + 64) + (64 * 6 + 6);
    assert_eq!(count_params(&cnn).unwrap().params, expect);
}

#[test]
fn latency_bookkeeping() {
    let m = Msti::<f32>::new(small_config(), 1).unwrap();
    let seg = Tensor::<f32>::zeros(vec![3, 20]);
    let cfg = LatencyConfig {
        runs: 100,
        warmup: 10,
        deadline_ms: f64::INFINITY,
        sequential: false,
    };
    let r = latency_run(&m, &seg, &cfg).unwrap();
    assert_eq!(r.durations_ms.len(), 100);
    assert!(r.p50_ms <= r.p95_ms && r.p95_ms <= r.max_ms);
    assert_eq!(r.misses, 0);
    assert_eq!(r.warmup, 10);
    let tight = LatencyConfig {
        deadline_ms: 0.0,
        runs: 5,
        ..cfg
    };
    assert_eq!(latency_run(&m, &seg, &tight).unwrap().misses, 5);
    assert!(latency_run(&m, &Tensor::<f32>::zeros(vec![3, 21]), &cfg).is_err());
}

#[test]
fn percentile_nearest_rank() {
    let xs: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(percentile(&xs, 0.5), 10.0);
    assert_eq!(percentile(&xs, 0.95), 19.0);
    assert_eq!(percentile(&xs, 1.0), 20.0);
    assert_eq!(percentile(&xs, 0.0), 1.0);
}

#[test]
fn wisdm_deadline_and_step() {
    assert!((default_deadline_ms(200, 20.0) - 500.0).abs() < 1e-9);
    assert_eq!(stream_step(100), 5);
    assert_eq!(stream_step(90), 5);
    assert_eq!(stream_step(10), 1);
}

#[test]
fn stream_replay_segment_count() {
    let mut cfg = small_config();
    cfg.window = 100;
    let m = Msti::<f32>::new(cfg, 0).unwrap();
    let s = stream(1000, 3);
    let r = stream_replay(&m, &s, None, stream_step(100), f64::INFINITY).unwrap();
    assert_eq!(r.segments.len(), 181);
    assert_eq!(r.segments[180].start, 900);
    assert_eq!(r.met_fraction, 1.0);
    let short = stream_replay(&m, &stream(99, 3), None, 5, 1.0).unwrap();
    assert!(short.segments.is_empty());
    assert!(stream_replay(&m, &stream(200, 2), None, 5, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stream_replay_matches_window_count(len in 0usize..80, step in 1usize..12) {
        let m = PlainCnn::<f32>::new(PlainCnnConfig { widths: [4, 4], ..PlainCnnConfig::new(2, 20, 3) }, 0);
        let r = stream_replay(&m, &stream(len, 2), None, step, f64::INFINITY).unwrap();
        prop_assert_eq!(r.segments.len(), window_count(len, m.input_shape().1, step));
        for (i, seg) in r.segments.iter().enumerate() {
            prop_assert_eq!(seg.start, i * step);
            prop_assert!(seg.predicted < 3);
        }
    }
}
