use super::*;
use crate::rng;
use rand::Rng as _;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

fn assert_tensor_close(a: &Tensor, b: &Tensor, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert_close(*x, *y, tol);
    }
}

// ---- forward examples ----

#[test]
fn matmul_identity() {
    let tape = Tape::new();
    let eye = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let a = Tensor::new(vec![2, 2], vec![3.0, -1.5, 2.25, 0.5]).unwrap();
    let av = tape.leaf(a.clone());
    let out = eye.matmul(&av).unwrap().value();
    assert_eq!(out, a);
}

#[test]
fn softmax_symmetry() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap());
    let y = x.softmax_last().unwrap().value();
    for v in y.data() {
        assert_close(*v, 1.0 / 3.0, 1e-15);
    }
}

#[test]
fn softmax_is_overflow_safe() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1000.0, 999.0]).unwrap());
    let y = x.softmax_last().unwrap().value();
    assert!(y.all_finite());
    assert_close(y.data()[0] + y.data()[1], 1.0, 1e-15);
}

#[test]
fn mean_over_axis_example() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let m = x.mean_axis(1).unwrap().value();
    assert_eq!(m.shape(), &[2]);
    assert_eq!(m.data(), &[1.5, 3.5]);
}

#[test]
fn batched_matmul_matches_per_slice() {
    let mut r = rng::stream(3, 0);
    let a = Tensor::randn(&[2, 3, 4], &mut r);
    let b = Tensor::randn(&[2, 4, 5], &mut r);
    let tape = Tape::new();
    let out = tape.leaf(a.clone()).matmul(&tape.leaf(b.clone())).unwrap().value();
    assert_eq!(out.shape(), &[2, 3, 5]);
    for batch in 0..2 {
        let a2 = Tensor::new(vec![3, 4], a.data()[batch * 12..(batch + 1) * 12].to_vec()).unwrap();
        let b2 = Tensor::new(vec![4, 5], b.data()[batch * 20..(batch + 1) * 20].to_vec()).unwrap();
        let t2 = Tape::new();
        let o2 = t2.leaf(a2).matmul(&t2.leaf(b2)).unwrap().value();
        for (i, v) in o2.data().iter().enumerate() {
            assert_eq!(*v, out.data()[batch * 15 + i]);
        }
    }
}

// ---- backward examples ----

#[test]
fn backward_sum_of_squares() {
    let tape = Tape::new();
    let x = tape.param("x", Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
    let loss = x.mul(&x).unwrap().sum_all().unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get("x").unwrap().data(), &[2.0, -4.0, 6.0]);
}

#[test]
fn backward_mean_abs() {
    let tape = Tape::new();
    let x = tape.param("x", Tensor::new(vec![2], vec![2.0, -3.0]).unwrap());
    let loss = x.abs().unwrap().mean_all().unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get("x").unwrap().data(), &[0.5, -0.5]);
}

#[test]
fn backward_matmul_chain_matches_finite_differences() {
    // trace of (A*B)*C on random 3x3 inputs, FD step 1e-5, rel err < 1e-6.
    let mut r = rng::stream(11, 0);
    let leaves = vec![
        Tensor::randn(&[3, 3], &mut r),
        Tensor::randn(&[3, 3], &mut r),
        Tensor::randn(&[3, 3], &mut r),
    ];
    let f = as_loss_fn(|tape, vars| {
        let prod = vars[0].matmul(&vars[1])?.matmul(&vars[2])?;
        // trace via elementwise product with the identity
        let eye = tape.leaf(Tensor::from_fn(&[3, 3], |i| {
            if i % 4 == 0 {
                1.0
            } else {
                0.0
            }
        }));
        prod.mul(&eye)?.sum_all()
    });
    let report = grad_check(&f, &leaves, 1e-5).unwrap();
    assert!(
        report.max_rel_error < 1e-6,
        "max rel err {}",
        report.max_rel_error
    );
}

#[test]
fn backward_unused_leaf_gets_zero_gradient() {
    let tape = Tape::new();
    let x = tape.param("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let _unused = tape.param("unused", Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap());
    let loss = x.mean_all().unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng::stream(12, 0);
    let x = Tensor::randn(&[4], &mut r);
    let grad_of = |a: f64, b: f64| -> Vec<f64> {
        let tape = Tape::new();
        let xv = tape.param("x", x.clone());
        let f = xv.mul(&xv).unwrap().mean_all().unwrap(); // f = mean(x^2)
        let g = xv.exp().unwrap().mean_all().unwrap(); // g = mean(exp x)
        let loss = f.scalar_mul(a).unwrap().add(&g.scalar_mul(b).unwrap()).unwrap();
        tape.backward(loss).unwrap().get("x").unwrap().data().to_vec()
    };
    let gf = grad_of(1.0, 0.0);
    let gg = grad_of(0.0, 1.0);
    let combined = grad_of(2.5, -1.25);
    for i in 0..4 {
        assert_close(combined[i], 2.5 * gf[i] - 1.25 * gg[i], 1e-12);
    }
}

// ---- grad_check examples ----

#[test]
fn grad_check_polynomial_is_nearly_exact() {
    let f = as_loss_fn(|_, vars| vars[0].mul(&vars[0])?.mean_all());
    let report = grad_check(&f, &[Tensor::scalar(3.0)], 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
}

#[test]
fn grad_check_flags_the_abs_kink() {
    let f = as_loss_fn(|_, vars| vars[0].abs()?.mean_all());
    // The stencil straddles the kink at 0: analytic sign = 1, central
    // difference 0.5, so the non-smooth point is flagged.
    let report = grad_check(&f, &[Tensor::scalar(5e-6)], 1e-5).unwrap();
    assert!(report.max_rel_error > 0.3, "{}", report.max_rel_error);
}

#[test]
fn grad_check_rejects_bad_step() {
    let f = as_loss_fn(|_, vars| vars[0].mean_all());
    assert!(grad_check(&f, &[Tensor::scalar(1.0)], 0.0).is_err());
}

// ---- every op matches finite differences on smooth random inputs ----

fn fd_trial(op: &str, trial: u64) {
    let mut r = rng::stream(0xF00D + trial, 0);
    let shift_away_from_zero = |t: Tensor| -> Tensor {
        Tensor::new(
            t.shape().to_vec(),
            t.data()
                .iter()
                .map(|v| v.signum().max(0.0) * 0.5 + 0.5 + v.abs() * 0.5)
                .collect(),
        )
        .unwrap()
    };
    let (leaves, f): (Vec<Tensor>, Box<dyn for<'a> Fn(&'a Tape, &[Var<'a>]) -> Result<Var<'a>>>) =
        match op {
            "add" => (
                vec![Tensor::randn(&[2, 3], &mut r), Tensor::randn(&[2, 3], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].add(&v[1])?.mean_all())),
            ),
            "subtract" => (
                vec![Tensor::randn(&[2, 3], &mut r), Tensor::randn(&[2, 3], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].sub(&v[1])?.exp()?.mean_all())),
            ),
            "elementwise-multiply" => (
                vec![Tensor::randn(&[2, 3], &mut r), Tensor::randn(&[2, 3], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].mul(&v[1])?.mean_all())),
            ),
            "scalar-multiply" => (
                vec![Tensor::randn(&[4], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].scalar_mul(0.75)?.tanh()?.mean_all())),
            ),
            "matrix-multiply" => (
                vec![Tensor::randn(&[3, 4], &mut r), Tensor::randn(&[4, 2], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].matmul(&v[1])?.scalar_mul(0.25)?.exp()?.mean_all())),
            ),
            "matrix-multiply-batched" => (
                vec![
                    Tensor::randn(&[2, 2, 3], &mut r),
                    Tensor::randn(&[2, 3, 2], &mut r),
                ],
                Box::new(as_loss_fn(|_, v| v[0].matmul(&v[1])?.scalar_mul(0.25)?.exp()?.mean_all())),
            ),
            "reshape" => (
                vec![Tensor::randn(&[2, 6], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].reshape(&[3, 4])?.exp()?.mean_all())),
            ),
            "transpose" => (
                vec![Tensor::randn(&[2, 3, 4], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].transpose(&[2, 0, 1])?.tanh()?.mean_all())),
            ),
            "concatenate" => (
                vec![Tensor::randn(&[2, 2], &mut r), Tensor::randn(&[3, 2], &mut r)],
                Box::new(as_loss_fn(|tape, v| tape.concat(&[v[0], v[1]], 0)?.tanh()?.mean_all())),
            ),
            "slice" => (
                vec![Tensor::randn(&[4, 5], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].slice(&[(1, 2), (2, 3)])?.exp()?.mean_all())),
            ),
            "mean-over-axis" => (
                vec![Tensor::randn(&[3, 4], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].mean_axis(0)?.tanh()?.mean_all())),
            ),
            "variance-over-axis" => (
                vec![Tensor::randn(&[3, 4], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].var_axis(1)?.mean_all())),
            ),
            "absolute-value" => (
                vec![shift_away_from_zero(Tensor::randn(&[5], &mut r))],
                Box::new(as_loss_fn(|_, v| v[0].abs()?.mean_all())),
            ),
            "square-root" => (
                vec![shift_away_from_zero(Tensor::randn(&[5], &mut r))],
                Box::new(as_loss_fn(|_, v| v[0].sqrt()?.mean_all())),
            ),
            "exponential" => (
                vec![Tensor::randn(&[5], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].exp()?.mean_all())),
            ),
            "natural-log-of-one-plus" => (
                vec![shift_away_from_zero(Tensor::randn(&[5], &mut r))],
                Box::new(as_loss_fn(|_, v| v[0].ln_1p()?.mean_all())),
            ),
            "softmax-over-last-axis" => (
                vec![Tensor::randn(&[2, 4], &mut r), Tensor::randn(&[2, 4], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].softmax_last()?.mul(&v[1])?.mean_all())),
            ),
            "GELU" => (
                vec![Tensor::randn(&[6], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].gelu()?.mean_all())),
            ),
            "tanh" => (
                vec![Tensor::randn(&[6], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].tanh()?.mean_all())),
            ),
            "sigmoid" => (
                vec![Tensor::randn(&[6], &mut r)],
                Box::new(as_loss_fn(|_, v| v[0].sigmoid()?.mean_all())),
            ),
            other => panic!("unknown op {other}"),
        };
    let report = grad_check(&f, &leaves, 1e-5).unwrap();
    assert!(
        report.max_rel_error < 1e-6,
        "{op} trial {trial}: rel err {}",
        report.max_rel_error
    );
}

#[test]
fn every_op_matches_finite_differences_over_100_trials() {
    let ops = [
        "add",
        "subtract",
        "elementwise-multiply",
        "scalar-multiply",
        "matrix-multiply",
        "matrix-multiply-batched",
        "reshape",
        "transpose",
        "concatenate",
        "slice",
        "mean-over-axis",
        "variance-over-axis",
        "absolute-value",
        "square-root",
        "exponential",
        "natural-log-of-one-plus",
        "softmax-over-last-axis",
        "GELU",
        "tanh",
        "sigmoid",
    ];
    for op in ops {
        for trial in 0..100 {
            fd_trial(op, trial);
        }
    }
}

// ---- structural round-trips ----

#[test]
fn reshape_round_trip_is_exact() {
    let mut r = rng::stream(21, 0);
    let x = Tensor::randn(&[3, 8], &mut r);
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let back = v.reshape(&[4, 6]).unwrap().reshape(&[3, 8]).unwrap().value();
    assert_eq!(back, x);
}

#[test]
fn transpose_round_trip_is_exact() {
    let mut r = rng::stream(22, 0);
    let x = Tensor::randn(&[2, 3, 5], &mut r);
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let t = v.transpose(&[2, 0, 1]).unwrap();
    // inverse permutation of [2,0,1] is [1,2,0]
    let back = t.transpose(&[1, 2, 0]).unwrap().value();
    assert_eq!(back, x);
}

#[test]
fn concat_slice_round_trip_is_exact() {
    let mut r = rng::stream(23, 0);
    let a = Tensor::randn(&[2, 4], &mut r);
    let b = Tensor::randn(&[3, 4], &mut r);
    let tape = Tape::new();
    let (av, bv) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let joined = tape.concat(&[av, bv], 0).unwrap();
    let a_back = joined.slice(&[(0, 2), (0, 4)]).unwrap().value();
    let b_back = joined.slice(&[(2, 3), (0, 4)]).unwrap().value();
    assert_eq!(a_back, a);
    assert_eq!(b_back, b);
}

// ---- error contracts ----

#[test]
fn shape_mismatch_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[3, 3]));
    let err = a.add(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 3]"), "{msg}");
}

#[test]
fn variance_over_empty_axis_is_rejected() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 0]));
    assert!(matches!(
        a.var_axis(1).unwrap_err(),
        TensorError::EmptyAxis { .. }
    ));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let tape = Tape::new();
    let x = tape.param("x", Tensor::zeros(&[3]));
    assert!(matches!(
        tape.backward(x).unwrap_err(),
        TensorError::NonScalarLoss { .. }
    ));
}

#[test]
fn backward_rejects_foreign_tape() {
    let tape_a = Tape::new();
    let tape_b = Tape::new();
    let x = tape_a.param("x", Tensor::scalar(1.0));
    let loss = x.mean_all().unwrap();
    assert!(matches!(
        tape_b.backward(loss).unwrap_err(),
        TensorError::ForeignTape
    ));
}

#[test]
fn sqrt_rejects_negative_input() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1.0, -0.5]).unwrap());
    assert!(x.sqrt().is_err());
}

#[test]
fn non_finite_results_are_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1], vec![1e308]).unwrap());
    let err = x.exp().unwrap_err();
    assert!(matches!(err, TensorError::NonFinite { .. }));
}

// ---- replay and precision ----

#[test]
fn replay_reproduces_the_recorded_output_bitwise() {
    let mut r = rng::stream(31, 0);
    let tape = Tape::new();
    let x = tape.param("x", Tensor::randn(&[3, 3], &mut r));
    let y = tape.leaf(Tensor::randn(&[3, 3], &mut r));
    let out = x
        .matmul(&y)
        .unwrap()
        .gelu()
        .unwrap()
        .softmax_last()
        .unwrap()
        .mean_all()
        .unwrap();
    let replayed = tape.replay(out).unwrap();
    assert_eq!(replayed, out.value());
}

#[test]
fn f32_precision_rounds_every_op() {
    let third = 1.0 / 3.0;
    let t = Tensor::with_precision(vec![1], vec![third], Precision::F32).unwrap();
    assert_eq!(t.data()[0], third as f32 as f64);
    let tape = Tape::new();
    let v = tape.leaf(t);
    let half = tape.leaf(Tensor::with_precision(vec![1], vec![0.5], Precision::F32).unwrap());
    let sum = v.add(&half).unwrap().value();
    assert_eq!(sum.data()[0], (third as f32 + 0.5f32) as f64);
    assert_eq!(sum.precision(), Precision::F32);
}

#[test]
fn mixed_precision_is_rejected() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::with_precision(vec![1], vec![1.0], Precision::F32).unwrap());
    let b = tape.leaf(Tensor::new(vec![1], vec![1.0]).unwrap());
    assert!(matches!(
        a.add(&b).unwrap_err(),
        TensorError::PrecisionMismatch { .. }
    ));
}

#[test]
fn mean_all_and_sum_all_agree() {
    let mut r = rng::stream(41, 0);
    let x = Tensor::randn(&[2, 5], &mut r);
    let expected: f64 = x.data().iter().sum();
    let tape = Tape::new();
    let v = tape.leaf(x);
    assert_close(v.sum_all().unwrap().item().unwrap(), expected, 1e-12);
}

#[test]
fn recip_positive_matches_reciprocal() {
    let mut r = rng::stream(42, 0);
    let tape = Tape::new();
    let vals: Vec<f64> = (0..6).map(|_| r.random_range(0.05..50.0)).collect();
    let x = tape.leaf(Tensor::new(vec![6], vals.clone()).unwrap());
    let inv = x.recip_positive().unwrap().value();
    for (v, i) in vals.iter().zip(inv.data()) {
        assert_close(*i, 1.0 / v, 1e-12 * (1.0 / v).abs().max(1.0));
    }
}
