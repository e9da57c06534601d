//! Property tests for the layer ops and cross-checks between analytic
//! gradients, finite differences, and closed forms.

use proptest::prelude::*;

use mednc_core::graph::{ConcatRole, EvalOptions, Graph};
use mednc_core::ops;
use mednc_core::params::ParameterStore;
use mednc_core::tensor::Tensor;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        values in finite_vec(12),
        shift in -100.0f64..100.0,
    ) {
        let x = Tensor::new(vec![3, 4], values.clone()).unwrap();
        let y = ops::softmax_forward(&x, 1).unwrap();
        for row in 0..3 {
            let sum: f64 = y.values()[row * 4..(row + 1) * 4].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        let shifted =
            Tensor::new(vec![3, 4], values.iter().map(|v| v + shift).collect()).unwrap();
        let y2 = ops::softmax_forward(&shifted, 1).unwrap();
        for (a, b) in y.values().iter().zip(y2.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_output_is_nonnegative(values in finite_vec(16)) {
        let x = Tensor::from_vec(values);
        let y = ops::relu_forward(&x);
        prop_assert!(y.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn concat_then_split_is_identity(
        a_values in finite_vec(6),
        b_values in finite_vec(10),
    ) {
        let a = Tensor::new(vec![2, 3], a_values).unwrap();
        let b = Tensor::new(vec![2, 5], b_values).unwrap();
        let cat = ops::concat_forward(&[&a, &b], 1).unwrap();
        let parts = ops::concat_backward(&[a.shape().to_vec(), b.shape().to_vec()], &cat, 1);
        prop_assert_eq!(&parts[0], &a);
        prop_assert_eq!(&parts[1], &b);
    }

    #[test]
    fn flatten_round_trip_is_bit_exact(values in finite_vec(24)) {
        let x = Tensor::new(vec![2, 3, 2, 2], values).unwrap();
        let flat = ops::flatten_forward(&x).unwrap();
        prop_assert_eq!(flat.shape(), &[2, 12]);
        prop_assert_eq!(flat.reshape(&[2, 3, 2, 2]).unwrap(), x);
    }

    #[test]
    fn softmax_cross_entropy_gradient_closed_form(
        // Bounded so no probability falls under the log clamp (1e-12),
        // where the analytic gradient flattens by design.
        logits in proptest::collection::vec(-8.0f64..8.0, 8),
        target_classes in proptest::collection::vec(0usize..4, 2),
    ) {
        // d loss / d logits == (softmax - target) / batch.
        let batch = 2;
        let k = 4;
        let mut graph = Graph::new();
        let x = graph.input_with_grad("logits");
        let t = graph.input("target");
        let p = graph.softmax(x, 1);
        let loss = graph.cross_entropy(p, t);

        let mut target = vec![0.0; batch * k];
        for (row, &c) in target_classes.iter().enumerate() {
            target[row * k + c] = 1.0;
        }
        let feeds = vec![
            (x, Tensor::new(vec![batch, k], logits.clone()).unwrap()),
            (t, Tensor::new(vec![batch, k], target.clone()).unwrap()),
        ];
        let params = ParameterStore::new();
        let eval = graph
            .forward_to(&[loss, p], &params, &feeds, EvalOptions::default(), None)
            .unwrap();
        let grads = graph.backward(&params, &eval, loss).unwrap();
        let dx = grads.for_node(x).unwrap();
        let probs = eval.value(p).unwrap();
        for (i, &t) in target.iter().enumerate() {
            let expected = (probs.values()[i] - t) / batch as f64;
            prop_assert!((dx.values()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_preserves_shape_and_zeroes_or_scales(
        values in finite_vec(30),
        seed in 0u64..1000,
    ) {
        let x = Tensor::from_vec(values.clone());
        let mut rng = mednc_core::rng::seeded(seed);
        let (y, mask) = ops::dropout_forward(&x, 0.5, true, &mut rng);
        let mask = mask.unwrap();
        for ((&v, &m), &o) in values.iter().zip(&mask).zip(y.values()) {
            if m {
                prop_assert!((o - 2.0 * v).abs() < 1e-15);
            } else {
                prop_assert_eq!(o, 0.0);
            }
        }
    }
}

/// Gradient of sum(dense output) w.r.t. W matches finite differences.
#[test]
fn dense_weight_gradient_matches_finite_differences() {
    use mednc_core::rng::seeded;
    use rand::Rng;

    let mut rng = seeded(31);
    let (batch, d_in, d_out) = (3, 4, 2);
    let xv: Vec<f64> = (0..batch * d_in)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let wv: Vec<f64> = (0..d_in * d_out)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let bv: Vec<f64> = (0..d_out).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut graph = Graph::new();
    let x = graph.input("x");
    let w = graph.input_with_grad("w");
    let b = graph.input("b");
    let y = graph.dense(x, w, b);

    let feeds = |wv: &[f64]| {
        vec![
            (x, Tensor::new(vec![batch, d_in], xv.clone()).unwrap()),
            (w, Tensor::new(vec![d_in, d_out], wv.to_vec()).unwrap()),
            (b, Tensor::new(vec![d_out], bv.clone()).unwrap()),
        ]
    };
    let params = ParameterStore::new();
    let eval = graph
        .forward_to(&[y], &params, &feeds(&wv), EvalOptions::default(), None)
        .unwrap();
    let out_shape = eval.value(y).unwrap().shape().to_vec();
    let grads = graph
        .backward_seeded(&params, &eval, y, Tensor::filled(&out_shape, 1.0))
        .unwrap();
    let dw = grads.for_node(w).unwrap();

    let h = 1e-6;
    for i in 0..wv.len() {
        let mut plus = wv.clone();
        plus[i] += h;
        let mut minus = wv.clone();
        minus[i] -= h;
        let f = |wv: &[f64]| -> f64 {
            graph
                .forward_value(y, &params, &feeds(wv), EvalOptions::default(), None)
                .unwrap()
                .values()
                .iter()
                .sum()
        };
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        let analytic = dw.values()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        assert!(rel < 1e-6, "element {i}: {analytic} vs {numeric}");
    }
}

/// The full suite at its documented thresholds (also exercised by the
/// `gradcheck` CLI subcommand).
#[test]
fn gradcheck_suite_passes() {
    let reports = mednc_core::gradcheck::check_all(99, 20, None).unwrap();
    for r in &reports {
        assert!(r.passed(), "{}: {} >= {}", r.op, r.max_rel_err, r.tolerance);
    }
}

/// Concat gradient routes ones back to each part with the right shapes.
#[test]
fn concat_gradient_routes_to_parts() {
    let mut graph = Graph::new();
    let a = graph.input_with_grad("a");
    let b = graph.input_with_grad("b");
    let cat = graph.concat(&[a, b], 1, ConcatRole::Plain).unwrap();

    let feeds = vec![
        (a, Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap()),
        (b, Tensor::new(vec![2, 2], vec![2.0; 4]).unwrap()),
    ];
    let params = ParameterStore::new();
    let eval = graph
        .forward_to(&[cat], &params, &feeds, EvalOptions::default(), None)
        .unwrap();
    let grads = graph
        .backward_seeded(&params, &eval, cat, Tensor::filled(&[2, 5], 1.0))
        .unwrap();
    let da = grads.for_node(a).unwrap();
    let db = grads.for_node(b).unwrap();
    assert_eq!(da.shape(), &[2, 3]);
    assert_eq!(db.shape(), &[2, 2]);
    assert!(da.values().iter().all(|&v| v == 1.0));
    assert!(db.values().iter().all(|&v| v == 1.0));
}
