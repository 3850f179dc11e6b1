mod common;

use common::{conv1d_oracle, op_gradchecks, random_tensor, rng};
use msti_core::substrate::{ConvSpec, Graph, PoolKind, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn conv(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>, spec: ConvSpec) -> Vec<f64> {
    let mut g = Graph::new();
    let (x, w, b) = (g.constant(x), g.constant(w), g.constant(b));
    let y = g.conv1d(x, w, Some(b), spec).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn conv1d_hand_example() {
    let y = conv(
        t(&[1, 1, 4], &[1., 2., 3., 4.]),
        t(&[1, 1, 3], &[1., 0., -1.]),
        t(&[1], &[0.]),
        ConvSpec::default(),
    );
    assert_eq!(y, vec![-2.0, -2.0]);
}

#[test]
fn conv1d_identity_and_zero() {
    let x = random_tensor(&mut rng(1), &[2, 3, 7]);
    let mut w = Tensor::zeros(vec![3, 3, 1]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let y = conv(x.clone(), w, Tensor::zeros(vec![3]), ConvSpec::default());
    assert_eq!(y, x.data());

    let w = random_tensor(&mut rng(2), &[4, 3, 3]);
    let y = conv(
        Tensor::zeros(vec![2, 3, 7]),
        w,
        Tensor::zeros(vec![4]),
        ConvSpec {
            stride: 1,
            padding: 1,
            groups: 1,
        },
    );
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn conv1d_errors_name_dimension() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(vec![1, 3, 8]));
    let w = g.constant(Tensor::zeros(vec![4, 2, 3]));
    let err = g
        .conv1d(x, w, None, ConvSpec::default())
        .unwrap_err()
        .to_string();
    assert!(err.contains("Cin/groups"), "{err}");

    let w = g.constant(Tensor::zeros(vec![4, 1, 3]));
    let err = g
        .conv1d(
            x,
            w,
            None,
            ConvSpec {
                groups: 2,
                ..Default::default()
            },
        )
        .unwrap_err()
        .to_string();
    assert!(err.contains("not divisible"), "{err}");

    let w = g.constant(Tensor::zeros(vec![4, 3, 9]));
    assert!(g.conv1d(x, w, None, ConvSpec::default()).is_err());
}

#[test]
fn pool_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 1, 4], &[1., 2., 3., 4.]));
    let y = g.pool1d(x, PoolKind::Avg, 2, 2).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, 3.5]);

    let x = g.constant(t(&[1, 1, 4], &[4., 1., 2., 3.]));
    let y = g.pool1d(x, PoolKind::Max, 4, 4).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let c = g.constant(Tensor::full(vec![2, 3, 6], 2.5));
    for kind in [PoolKind::Avg, PoolKind::Max] {
        let y = g.pool1d(c, kind, 3, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 2.5));
    }
    assert!(g.pool1d(x, PoolKind::Max, 5, 1).is_err());
}

#[test]
fn max_pool_ties_route_to_first_index() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(t(&[1, 1, 4], &[3., 3., 1., 3.]));
    let y = g.pool1d(x, PoolKind::Max, 4, 1).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn dense_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 2], &[1., 2.]));
    let w = g.constant(t(&[1, 2], &[1., 1.]));
    let b = g.constant(t(&[1], &[0.5]));
    let y = g.dense(x, w, Some(b), 1).unwrap();
    assert_eq!(g.value(y).data(), &[3.5]);

    let xi = random_tensor(&mut rng(3), &[3, 4]);
    let mut eye = Tensor::zeros(vec![4, 4]);
    for i in 0..4 {
        eye.data_mut()[i * 4 + i] = 1.0;
    }
    let x = g.constant(xi.clone());
    let w = g.constant(eye);
    let b = g.constant(Tensor::zeros(vec![4]));
    let y = g.dense(x, w, Some(b), 1).unwrap();
    assert_eq!(g.value(y).data(), xi.data());
}

#[test]
fn dense_groups_ignore_cross_group_entries() {
    let mut r = rng(4);
    let x = random_tensor(&mut r, &[2, 4]);
    let compact = random_tensor(&mut r, &[4, 2]);
    let mut full = random_tensor(&mut r, &[4, 4]);
    for m in 0..4 {
        let grp = m / 2;
        for j in 0..2 {
            full.data_mut()[m * 4 + grp * 2 + j] = compact.data()[m * 2 + j];
        }
    }
    let b = Tensor::zeros(vec![4]);
    let mut g = Graph::<f64>::new();
    let (xv, cv, fv, bv) = (
        g.constant(x),
        g.constant(compact),
        g.constant(full),
        g.constant(b),
    );
    let y1 = g.dense(xv, cv, Some(bv), 2).unwrap();
    let y2 = g.dense(xv, fv, Some(bv), 2).unwrap();
    assert_eq!(g.value(y1).data(), g.value(y2).data());
}

#[test]
fn activation_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(t(&[1, 2], &[0., 0.]));
    let s = g.softmax(z, 1).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    let zero = g.constant(t(&[1], &[0.]));
    let sg = g.sigmoid(zero);
    assert_eq!(g.value(sg).data(), &[0.5]);
    let ones = g.constant(Tensor::ones(vec![2, 3, 9]));
    let p = g.global_avg_pool(ones).unwrap();
    assert_eq!(g.shape(p), &[2, 3]);
    assert!(g.value(p).data().iter().all(|&v| v == 1.0));
    let tiny = g.constant(t(&[2], &[0.0, -1.0]));
    let l = g.log(tiny);
    assert!(g.value(l).is_finite());
    assert!(g.softmax(z, 2).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(random_tensor(&mut rng(5), &[2, 3, 4]));
    let loss = g.sum(x);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::<f64>::new();
    let x = g.variable(t(&[1], &[3.]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    assert_eq!(g.backward(loss).unwrap().get(x).unwrap().data(), &[6.0]);

    let mut g = Graph::<f64>::new();
    let x = g.variable(t(&[2], &[3., 1.]));
    assert!(g.backward(x).is_err());
}

#[test]
fn forward_is_deterministic() {
    let x = random_tensor(&mut rng(6), &[2, 4, 16]);
    let w = random_tensor(&mut rng(7), &[8, 2, 3]);
    let b = random_tensor(&mut rng(8), &[8]);
    let spec = ConvSpec {
        stride: 2,
        padding: 1,
        groups: 2,
    };
    let a = conv(x.clone(), w.clone(), b.clone(), spec);
    let c = conv(x, w, b, spec);
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        c.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

const GRAD_TOL: f64 = 1e-4;

#[test]
fn gradcheck_each_op_random_shapes() {
    for seed in 0..20u64 {
        for (name, err) in op_gradchecks(seed) {
            assert!(
                err < GRAD_TOL,
                "seed {seed} op {name}: relative error {err:e}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv1d_matches_triple_loop(
        seed in 0u64..10_000,
        b in 1usize..3,
        cin in 1usize..5,
        cout in 1usize..5,
        l in 3usize..17,
        taps in 1usize..4,
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[b, cin, l]);
        let w = random_tensor(&mut r, &[cout, cin, taps]);
        let bias = random_tensor(&mut r, &[cout]);
        let spec = ConvSpec { stride, padding: pad, groups: 1 };
        let got = conv(x.clone(), w.clone(), bias.clone(), spec);
        let want = conv1d_oracle(&x, &w, bias.data(), stride, pad, 1);
        for (a, e) in got.iter().zip(want.data()) {
            prop_assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..10_000, rows in 1usize..5, cols in 1usize..9, scale in 0.1f64..50.0) {
        let x = random_tensor(&mut rng(seed), &[rows, cols]).map(|v| v * scale);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x);
        let s = g.softmax(xv, 1).unwrap();
        for row in g.value(s).data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
