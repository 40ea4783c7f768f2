use std::collections::BTreeMap;

use rand::Rng;

use super::*;
use crate::rng::stream;

fn approx(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn matmul_identity_and_scalar() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_shape(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(Tensor::from_shape(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]));
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[5.0, 6.0, 7.0, 8.0]);

    let a = tape.constant(Tensor::scalar(2.0));
    let b = tape.constant(Tensor::scalar(3.0));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[6.0]);
}

#[test]
fn matmul_hand_case() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_shape(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(Tensor::from_shape(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_shape(vec![2, 3], vec![0.0; 6]));
    let b = tape.constant(Tensor::from_shape(vec![2, 2], vec![0.0; 4]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn softmax_symmetry_and_hand_case() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(vec![0.0, 0.0]));
    let s = tape.softmax_rows(x).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

    let x = tape.constant(Tensor::row(vec![2.0f64.ln(), 0.0]));
    let s = tape.softmax_rows(x).unwrap();
    let d = tape.value(s).data();
    assert!(approx(d[0], 2.0 / 3.0, 1e-15) && approx(d[1], 1.0 / 3.0, 1e-15));
}

#[test]
fn softmax_rows_sum_to_one_and_mask() {
    let mut rng = stream(11, &["softmax"]);
    let mut tape = Tape::new();
    for _ in 0..50 {
        let mut vals: Vec<f64> = (0..6).map(|_| rng.gen_range(-30.0..30.0)).collect();
        vals[1] = f64::NEG_INFINITY; // masked entry
        let x = tape.constant(Tensor::row(vals));
        let s = tape.softmax_rows(x).unwrap();
        let row = tape.value(s).data();
        assert!(approx(row.iter().sum::<f64>(), 1.0, 1e-12));
        assert_eq!(row[1], 0.0);
    }
}

#[test]
fn softmax_fully_masked_row_is_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_shape(
        vec![2, 2],
        vec![0.0, 1.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
    ));
    match tape.softmax_rows(x) {
        Err(TensorError::FullyMaskedRow { row }) => assert_eq!(row, 1),
        other => panic!("expected FullyMaskedRow, got {other:?}"),
    }
}

#[test]
fn softmax_shift_invariance() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(vec![0.3, -1.2, 2.5]));
    let shifted = tape.constant(Tensor::row(vec![0.3 + 7.0, -1.2 + 7.0, 2.5 + 7.0]));
    let s1 = tape.softmax_rows(x).unwrap();
    let s2 = tape.softmax_rows(shifted).unwrap();
    for (a, b) in tape.value(s1).data().iter().zip(tape.value(s2).data()) {
        assert!(approx(*a, *b, 1e-14));
    }
}

#[test]
fn layer_norm_cases() {
    let mut tape = Tape::new();
    let ones = tape.constant(Tensor::vector(vec![1.0, 1.0, 1.0]));
    let zeros = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));

    // Constant vector: eps keeps the division finite, output is all zeros.
    let x = tape.constant(Tensor::row(vec![4.0, 4.0, 4.0]));
    let out = tape.layer_norm(x, ones, zeros, 1e-12).unwrap();
    assert!(tape.value(out).data().iter().all(|v| v.abs() < 1e-6));

    // [1, 3]: mean 2, variance 1.
    let ones2 = tape.constant(Tensor::vector(vec![1.0, 1.0]));
    let zeros2 = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let x = tape.constant(Tensor::row(vec![1.0, 3.0]));
    let out = tape.layer_norm(x, ones2, zeros2, 1e-12).unwrap();
    let d = tape.value(out).data();
    assert!(approx(d[0], -1.0, 1e-9) && approx(d[1], 1.0, 1e-9));

    // gamma = 0 collapses to beta.
    let gamma0 = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let beta = tape.constant(Tensor::vector(vec![0.25, -0.5]));
    let x = tape.constant(Tensor::row(vec![-3.0, 9.0]));
    let out = tape.layer_norm(x, gamma0, beta, 1e-12).unwrap();
    assert_eq!(tape.value(out).data(), &[0.25, -0.5]);
}

#[test]
fn backward_linear_map() {
    // loss = w . x with x fixed => dloss/dw = x
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::row(vec![0.5, -1.0]).with_grad());
    let x = tape.constant(Tensor::from_shape(vec![2, 1], vec![3.0, 4.0]));
    let y = tape.matmul(w, x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[3.0, 4.0]);
}

#[test]
fn backward_product_and_chain_rule() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(3.0).with_grad());
    let b = tape.leaf(Tensor::scalar(4.0).with_grad());
    let m = tape.mul(a, b).unwrap();
    tape.backward(m).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[4.0]);
    assert_eq!(tape.grad(b).unwrap(), &[3.0]);

    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(2.0).with_grad());
    let b = tape.leaf(Tensor::scalar(3.0).with_grad());
    let m = tape.mul(a, b).unwrap();
    let sq = tape.mul(m, m).unwrap();
    tape.backward(sq).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[36.0]);
    assert_eq!(tape.grad(b).unwrap(), &[24.0]);
}

#[test]
fn backward_of_sum_is_all_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_shape(vec![3, 2], vec![9.0; 6]).with_grad());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(vec![1.0, 2.0]).with_grad());
    match tape.backward(x) {
        Err(TensorError::NotScalar { shape }) => assert_eq!(shape, vec![1, 2]),
        other => panic!("expected NotScalar, got {other:?}"),
    }
}

#[test]
fn backward_accumulates_until_cleared() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(5.0).with_grad());
    let s = tape.scale(x, 2.0);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    tape.zero_grads();
    assert!(tape.grad(x).is_none());
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0]);
}

#[test]
fn unreached_parameters_get_zero_gradient() {
    let mut tape = Tape::new();
    let used = tape.leaf(Tensor::scalar(1.0).with_grad());
    let unused = tape.leaf(Tensor::row(vec![1.0, 2.0]).with_grad());
    let loss = tape.scale(used, 3.0);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0]);
}

#[test]
fn replay_is_bit_exact() {
    let mut rng = stream(3, &["replay"]);
    let mut tape = Tape::new();
    let x = tape.leaf(
        Tensor::from_shape(vec![3, 4], (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .with_grad(),
    );
    let w = tape.constant(Tensor::from_shape(
        vec![4, 4],
        (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    ));
    let gamma = tape.constant(Tensor::vector(vec![1.0; 4]));
    let beta = tape.constant(Tensor::vector(vec![0.0; 4]));
    let h = tape.matmul(x, w).unwrap();
    let h = tape.gelu(h);
    let h = tape.layer_norm(h, gamma, beta, 1e-9).unwrap();
    let h = tape.softmax_rows(h).unwrap();
    let _loss = tape.sum(h);

    let replayed = tape.replay().unwrap();
    assert_eq!(replayed.len(), tape.len());
    for (i, v) in replayed.iter().enumerate() {
        let orig = tape.value(NodeId::test_only(i));
        assert_eq!(orig.shape(), v.shape());
        for (a, b) in orig.data().iter().zip(v.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "node {i} diverged on replay");
        }
    }
}

#[test]
fn grad_check_square_function() {
    let params = vec![("w".to_string(), Tensor::scalar(3.0))];
    let report = grad_check(
        &params,
        |tape, map| {
            let w = map["w"];
            tape.mul(w, w)
        },
        &GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-8,
            samples: 1,
            seed: 0,
            tamper: None,
        },
    )
    .unwrap();
    assert!(report.passed, "max rel err {}", report.max_rel_error);
    assert!(approx(report.entries[0].numeric, 6.0, 1e-6));
    assert!(report.max_rel_error < 1e-8);
}

#[test]
fn grad_check_constant_function_passes() {
    let params = vec![("w".to_string(), Tensor::row(vec![1.0, -2.0]))];
    let report = grad_check(
        &params,
        |tape, _| {
            let c = tape.constant(Tensor::scalar(42.0));
            Ok(tape.scale(c, 1.0))
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed);
    assert_eq!(report.max_rel_error, 0.0);
}

#[test]
fn grad_check_detects_nondeterminism() {
    use std::cell::Cell;
    let calls = Cell::new(0.0);
    let params = vec![("w".to_string(), Tensor::scalar(1.0))];
    let err = grad_check(
        &params,
        |tape, map| {
            calls.set(calls.get() + 1.0);
            let noise = tape.constant(Tensor::scalar(calls.get()));
            let w = map["w"];
            tape.mul(w, noise)
        },
        &GradCheckConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, TensorError::NonDeterministicForward { .. }));
}

#[test]
fn grad_check_tamper_hook_fails_report() {
    let params = vec![("w".to_string(), Tensor::scalar(3.0))];
    let report = grad_check(
        &params,
        |tape, map| {
            let w = map["w"];
            tape.mul(w, w)
        },
        &GradCheckConfig {
            tamper: Some(0.5),
            ..GradCheckConfig::default()
        },
    )
    .unwrap();
    assert!(!report.passed);
}

/// Every differentiable primitive agrees with central differences within
/// 1e-6 relative error on random small inputs.
#[test]
fn primitives_match_finite_differences() {
    let cfg = GradCheckConfig {
        step: 1e-5,
        tolerance: 1e-6,
        samples: 64,
        seed: 9,
        tamper: None,
    };
    let mut rng = stream(17, &["fd"]);
    let mut rand_t = |shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        Tensor::from_shape(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
    };

    type Builder =
        Box<dyn Fn(&mut Tape, &BTreeMap<String, NodeId>) -> Result<NodeId, TensorError>>;
    let cases: Vec<(&str, Vec<(String, Tensor)>, Builder)> = vec![
        (
            "matmul",
            vec![
                ("a".into(), rand_t(vec![3, 4])),
                ("b".into(), rand_t(vec![4, 2])),
            ],
            Box::new(|t, m| {
                let y = t.matmul(m["a"], m["b"])?;
                Ok(t.sum(y))
            }),
        ),
        (
            "add_mul_scale",
            vec![
                ("a".into(), rand_t(vec![2, 3])),
                ("b".into(), rand_t(vec![2, 3])),
            ],
            Box::new(|t, m| {
                let s = t.add(m["a"], m["b"])?;
                let p = t.mul(s, m["a"])?;
                let sc = t.scale(p, -1.7);
                Ok(t.sum(sc))
            }),
        ),
        (
            "add_row",
            vec![
                ("a".into(), rand_t(vec![3, 2])),
                ("r".into(), rand_t(vec![2])),
            ],
            Box::new(|t, m| {
                let y = t.add_row(m["a"], m["r"])?;
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            }),
        ),
        (
            "transpose_slice_concat",
            vec![("a".into(), rand_t(vec![3, 4]))],
            Box::new(|t, m| {
                let tr = t.transpose(m["a"]);
                let left = t.slice_cols(tr, 0, 2)?;
                let right = t.slice_cols(tr, 1, 3)?;
                let cat = t.concat_cols(&[left, right])?;
                let sq = t.mul(cat, cat)?;
                Ok(t.sum(sq))
            }),
        ),
        (
            "gather_rows_repeated",
            vec![("table".into(), rand_t(vec![4, 3]))],
            Box::new(|t, m| {
                let g = t.gather_rows(m["table"], &[1, 1, 3, 0])?;
                let sq = t.mul(g, g)?;
                Ok(t.sum(sq))
            }),
        ),
        (
            "softmax_rows",
            vec![("a".into(), rand_t(vec![2, 5]))],
            Box::new(|t, m| {
                let s = t.softmax_rows(m["a"])?;
                let sq = t.mul(s, s)?;
                Ok(t.sum(sq))
            }),
        ),
        (
            "layer_norm",
            vec![
                ("x".into(), rand_t(vec![3, 5])),
                ("gamma".into(), rand_t(vec![5])),
                ("beta".into(), rand_t(vec![5])),
            ],
            Box::new(|t, m| {
                let y = t.layer_norm(m["x"], m["gamma"], m["beta"], 1e-6)?;
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            }),
        ),
        (
            "gelu_sigmoid",
            vec![("a".into(), rand_t(vec![2, 4]))],
            Box::new(|t, m| {
                let g = t.gelu(m["a"]);
                let s = t.sigmoid(g);
                Ok(t.sum(s))
            }),
        ),
        (
            "log_of_sigmoid",
            vec![("a".into(), rand_t(vec![1, 4]))],
            Box::new(|t, m| {
                let s = t.sigmoid(m["a"]);
                let l = t.log(s);
                Ok(t.sum(l))
            }),
        ),
        (
            "bce_sum",
            vec![("z".into(), rand_t(vec![1, 3]))],
            Box::new(|t, m| {
                let p = t.sigmoid(m["z"]);
                t.bce_sum(p, &Tensor::row(vec![1.0, 0.0, 1.0]))
            }),
        ),
        (
            "ce_logits_with_mask",
            vec![("z".into(), rand_t(vec![1, 3]))],
            Box::new(|t, m| {
                let mask = t.constant(Tensor::row(vec![0.0, 0.0, f64::NEG_INFINITY]));
                let masked = t.add(m["z"], mask)?;
                t.ce_logits(masked, &Tensor::row(vec![0.5, 0.5, 0.0]))
            }),
        ),
    ];

    for (name, params, builder) in cases {
        let report = grad_check(&params, builder, &cfg).unwrap();
        assert!(
            report.passed,
            "{name}: max rel err {} (worst {:?})",
            report.max_rel_error,
            report.worst().map(|e| (&e.param, e.index))
        );
    }
}
