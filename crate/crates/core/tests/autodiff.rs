use incsg::gradcheck::{random_tensor, weighted_sum, Bound, GradCheck, Inputs};
use incsg::tensor::{AggregateMode, Tape, Tensor, Var};
use incsg::{Error, Result};
use proptest::prelude::*;

fn m(rows: &[&[f32]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn inputs(list: &[(&str, Tensor<f64>)]) -> Inputs {
    list.iter().map(|(k, t)| (k.to_string(), t.clone())).collect()
}

fn check(name: &str, ins: Inputs, f: impl Fn(&mut Tape<f64>, &Bound) -> Result<Var>) {
    let report = GradCheck::default().run(name, &ins, &f).unwrap();
    assert!(
        report.passed,
        "{name}: worst relative error {:.3e} at {}",
        report.worst_error, report.worst_at
    );
}

#[test]
fn matmul_values() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let id = tape.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let c = tape.matmul(a, id).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let row = tape.constant(m(&[&[1.0, 2.0]]));
    let col = tape.constant(m(&[&[3.0], &[4.0]]));
    let dot = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(dot).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Shape(msg)) => assert!(msg.contains("[2, 3]"), "{msg}"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_sum_gradient_is_replicated_row_sums() {
    let a = random_tensor(vec![3, 4], 1, 0).cast::<f32>();
    let b = random_tensor(vec![4, 2], 1, 1).cast::<f32>();
    let mut tape = Tape::<f32>::new();
    let va = tape.param(a);
    let vb = tape.constant(b.clone());
    let c = tape.matmul(va, vb).unwrap();
    let loss = tape.sum(c);
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(va).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expected: f32 = b.row(k).iter().sum();
            assert!((g.at(i, k) - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn matmul_gradient_matches_finite_differences_in_f32() {
    // Linear in each argument, so even f32 central differences are accurate.
    let a = random_tensor(vec![3, 4], 2, 0).cast::<f32>();
    let b = random_tensor(vec![4, 2], 2, 1).cast::<f32>();
    let loss_of = |a: &Tensor| {
        let mut tape = Tape::<f32>::new();
        let va = tape.param(a.clone());
        let vb = tape.constant(b.clone());
        let c = tape.matmul(va, vb).unwrap();
        let s = tape.sum(c);
        (tape.value(s).item(), tape.backward(s).unwrap().get(va).unwrap().clone())
    };
    let (_, g) = loss_of(&a);
    let h = 1e-3f32;
    for i in 0..a.len() {
        let mut up = a.clone();
        up.data_mut()[i] += h;
        let mut down = a.clone();
        down.data_mut()[i] -= h;
        let numeric = (loss_of(&up).0 - loss_of(&down).0) / (2.0 * h);
        let analytic = g.data()[i];
        assert!((numeric - analytic).abs() <= 1e-3 * analytic.abs().max(1.0), "{numeric} vs {analytic}");
    }
}

#[test]
fn elementwise_values_and_relu_kink() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let mut tape = Tape::<f32>::new();
    let z = tape.param(Tensor::vector(vec![0.0]));
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(s).item(), 0.5);
    let loss = tape.sum(s);
    assert_eq!(tape.backward(loss).unwrap().get(z).unwrap().item(), 0.25);
}

#[test]
fn sigmoid_gradient_at_zero_matches_finite_differences() {
    let f = |t: &mut Tape<f64>, b: &Bound| {
        let s = t.sigmoid(b["x"]);
        Ok(t.sum(s))
    };
    let ins = inputs(&[("x", Tensor::vector(vec![0.0]))]);
    let g = incsg::gradcheck::analytic_gradients(&ins, &f).unwrap();
    assert!((g["x"].item() - 0.25).abs() < 1e-12);
    check("sigmoid@0", ins, f);
}

#[test]
fn log_rejects_non_positive_input() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(tape.log(x), Err(Error::Domain(_))));
}

#[test]
fn layer_norm_values() {
    let mut tape = Tape::<f32>::new();
    let gain = tape.constant(Tensor::vector(vec![1.0; 3]));
    let bias = tape.constant(Tensor::vector(vec![0.0; 3]));
    let flat = tape.constant(m(&[&[5.0, 5.0, 5.0]]));
    let y = tape.layer_norm(flat, gain, bias, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

    let ramp = tape.constant(m(&[&[1.0, 2.0, 3.0]]));
    let y = tape.layer_norm(ramp, gain, bias, 1e-5).unwrap();
    let s = (2.0f64 / 3.0 + 1e-5).sqrt();
    let expected = [-1.0 / s, 0.0, 1.0 / s];
    for (a, e) in tape.value(y).data().iter().zip(expected) {
        assert!((*a as f64 - e).abs() < 1e-6, "{a} vs {e}");
    }
    assert!((expected[2] - 1.2247).abs() < 1e-4);
}

#[test]
fn dropout_contract() {
    let x = random_tensor(vec![8, 16], 3, 0).cast::<f32>();
    let mut tape = Tape::<f32>::new();
    let v = tape.constant(x.clone());
    let eval = tape.dropout(v, 0.5, false, 1, 0).unwrap();
    assert_eq!(tape.value(eval), &x);
    let zero = tape.dropout(v, 0.0, true, 1, 0).unwrap();
    assert_eq!(tape.value(zero), &x);
    let train = tape.dropout(v, 0.5, true, 1, 0).unwrap();
    let out = tape.value(train).clone();
    let mut dropped = 0;
    for (o, i) in out.data().iter().zip(x.data()) {
        if *o == 0.0 {
            dropped += 1;
        } else {
            assert_eq!(*o, *i * 2.0);
        }
    }
    assert!(dropped > 30 && dropped < 98, "{dropped} of 128 dropped");
    let again = tape.dropout(v, 0.5, true, 1, 0).unwrap();
    assert_eq!(tape.value(again), &out);
    assert!(matches!(tape.dropout(v, 1.0, true, 1, 0), Err(Error::Parameter(_))));
}

#[test]
fn segment_aggregate_values_and_errors() {
    let mut tape = Tape::<f32>::new();
    let v = tape.constant(m(&[&[2.0], &[4.0]]));
    let mean = tape.segment_aggregate(v, &[0, 0], 1, AggregateMode::Mean).unwrap();
    assert_eq!(tape.value(mean).data(), &[3.0]);
    let sparse = tape.segment_aggregate(v, &[0, 1], 3, AggregateMode::Sum).unwrap();
    assert_eq!(tape.value(sparse).data(), &[2.0, 4.0, 0.0]);
    assert!(matches!(
        tape.segment_aggregate(v, &[0, 3], 3, AggregateMode::Mean),
        Err(Error::Index(_))
    ));
}

#[test]
fn softmax_and_max_pool_values() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(m(&[&[0.0, 0.0]]));
    let s = tape.softmax_rows(x).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

    let p = tape.param(m(&[&[1.0, 5.0], &[3.0, 2.0]]));
    let pooled = tape.max_pool_rows(p).unwrap();
    assert_eq!(tape.value(pooled).data(), &[3.0, 5.0]);
    let loss = tape.sum(pooled);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(p).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);

    let tie = tape.param(m(&[&[2.0], &[2.0]]));
    let pooled = tape.max_pool_rows(tie).unwrap();
    let loss = tape.sum(pooled);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(tie).unwrap().data(), &[1.0, 0.0]);

    let empty = tape.constant(Tensor::zeros(vec![0, 3]));
    assert!(matches!(tape.max_pool_rows(empty), Err(Error::Domain(_))));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
    let loss = tape.sum(x);
    assert_eq!(tape.backward(loss).unwrap().get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::vector(vec![-1.0, 2.0]));
    let unused = tape.param(Tensor::zeros(vec![2, 2]));
    let r = tape.relu(x);
    let loss = tape.sum(r);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(vec![2, 2]));
}

#[test]
fn backward_rejects_non_scalar_and_empty() {
    let tape = Tape::<f32>::new();
    assert!(matches!(tape.backward(first_var()), Err(Error::Contract(_))));
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

fn first_var() -> Var {
    let mut t = Tape::<f32>::new();
    t.constant(Tensor::scalar(0.0))
}

#[test]
fn double_backward_without_reset_doubles() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(random_tensor(vec![3, 3], 4, 0).cast());
    let s = tape.sigmoid(x);
    let y = tape.mul(s, x).unwrap();
    let loss = tape.sum(y);
    let once = tape.backward(loss).unwrap();
    let mut twice = once.clone();
    tape.accumulate_backward(loss, &mut twice).unwrap();
    for (a, b) in once.get(x).unwrap().data().iter().zip(twice.get(x).unwrap().data()) {
        assert_eq!(a * 2.0, *b);
    }
}

#[test]
fn tapes_are_deterministic() {
    let run = || {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(random_tensor(vec![6, 5], 9, 0).cast());
        let w = tape.param(random_tensor(vec![5, 4], 9, 1).cast());
        let h = tape.matmul(x, w).unwrap();
        let d = tape.dropout(h, 0.5, true, 11, 3).unwrap();
        let s = tape.softmax_rows(d).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        (bits(g.get(x).unwrap()), bits(g.get(w).unwrap()))
    };
    assert_eq!(run(), run());
}

// Finite-difference checks of every primitive on random inputs in [-1, 1].

fn rt(shape: &[usize], stream: u64) -> Tensor<f64> {
    random_tensor(shape.to_vec(), 2024, stream)
}

#[test]
fn fd_matmul() {
    check("matmul", inputs(&[("a", rt(&[3, 4], 0)), ("b", rt(&[4, 5], 1))]), |t, b| {
        let c = t.matmul(b["a"], b["b"])?;
        weighted_sum(t, c, 1)
    });
}

#[test]
fn fd_binary_elementwise() {
    let ins = inputs(&[("a", rt(&[4, 3], 2)), ("b", rt(&[4, 3], 3))]);
    check("add", ins.clone(), |t, b| {
        let c = t.add(b["a"], b["b"])?;
        weighted_sum(t, c, 2)
    });
    check("sub", ins.clone(), |t, b| {
        let c = t.sub(b["a"], b["b"])?;
        weighted_sum(t, c, 3)
    });
    check("mul", ins, |t, b| {
        let c = t.mul(b["a"], b["b"])?;
        weighted_sum(t, c, 4)
    });
}

#[test]
fn fd_broadcasts() {
    let ins = inputs(&[("a", rt(&[5, 3], 4)), ("row", rt(&[3], 5)), ("col", rt(&[5, 1], 6))]);
    check("add_row/mul_row/mul_col", ins, |t, b| {
        let x = t.add_row(b["a"], b["row"])?;
        let y = t.mul_row(x, b["row"])?;
        let z = t.mul_col(y, b["col"])?;
        weighted_sum(t, z, 5)
    });
}

#[test]
fn fd_unary() {
    check("unary", inputs(&[("x", rt(&[4, 4], 7))]), |t, b| {
        let a = t.affine(b["x"], 1.7, 0.2);
        let n = t.neg(a);
        let s = t.sigmoid(n);
        let e = t.exp(s);
        let l = t.log(e)?;
        let c = t.clamp(l, 0.0, 0.6);
        let r = t.relu(b["x"]);
        let sum = t.add(c, r)?;
        weighted_sum(t, sum, 6)
    });
}

#[test]
fn fd_layer_norm() {
    let ins = inputs(&[("x", rt(&[4, 8], 8)), ("gain", rt(&[8], 9)), ("bias", rt(&[8], 10))]);
    check("layer_norm", ins, |t, b| {
        let y = t.layer_norm(b["x"], b["gain"], b["bias"], 1e-5)?;
        weighted_sum(t, y, 7)
    });
}

#[test]
fn fd_dropout_with_fixed_mask() {
    check("dropout", inputs(&[("x", rt(&[6, 5], 11))]), |t, b| {
        let y = t.dropout(b["x"], 0.5, true, 5, 1)?;
        weighted_sum(t, y, 8)
    });
}

#[test]
fn fd_gather_and_segments() {
    let idx = [3, 0, 0, 4, 1];
    let targets = [0, 2, 2, 1, 0];
    check("gather+segment_aggregate", inputs(&[("x", rt(&[5, 3], 12))]), move |t, b| {
        let g = t.gather_rows(b["x"], &idx)?;
        let mean = t.segment_aggregate(g, &targets, 4, AggregateMode::Mean)?;
        let sum = t.segment_aggregate(g, &targets, 4, AggregateMode::Sum)?;
        let both = t.concat(&[mean, sum], 1)?;
        weighted_sum(t, both, 9)
    });
    check("segment_softmax", inputs(&[("x", rt(&[6, 2], 13))]), |t, b| {
        let s = t.segment_softmax(b["x"], &[1, 0, 1, 1, 2, 0], 3)?;
        weighted_sum(t, s, 10)
    });
}

#[test]
fn fd_softmax_family() {
    check("softmax_rows", inputs(&[("x", rt(&[3, 5], 14))]), |t, b| {
        let s = t.softmax_rows(b["x"])?;
        weighted_sum(t, s, 11)
    });
    check("log_softmax_rows", inputs(&[("x", rt(&[3, 5], 15))]), |t, b| {
        let s = t.log_softmax_rows(b["x"])?;
        weighted_sum(t, s, 12)
    });
}

#[test]
fn fd_pooling_concat_slices() {
    check("max_pool_groups", inputs(&[("x", rt(&[6, 4], 16))]), |t, b| {
        let p = t.max_pool_groups(b["x"], 3)?;
        weighted_sum(t, p, 13)
    });
    let ins = inputs(&[("a", rt(&[2, 3], 17)), ("b", rt(&[2, 2], 18)), ("c", rt(&[1, 3], 19))]);
    check("concat", ins, |t, b| {
        let cols = t.concat(&[b["a"], b["b"]], 1)?;
        let rows = t.concat(&[b["a"], b["c"]], 0)?;
        let left = weighted_sum(t, cols, 14)?;
        let right = weighted_sum(t, rows, 15)?;
        t.add(left, right)
    });
    check("slice_cols+row_sum", inputs(&[("x", rt(&[3, 6], 20))]), |t, b| {
        let s = t.slice_cols(b["x"], 2, 5)?;
        let r = t.row_sum(s)?;
        weighted_sum(t, r, 16)
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in 0u64..1000) {
        let x = random_tensor(vec![rows, cols], seed, 0).map(|v| v * 20.0).cast::<f32>();
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(x);
        let s = tape.softmax_rows(v).unwrap();
        for r in 0..rows {
            let total: f32 = tape.value(s).row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_rows_are_centered(rows in 1usize..6, cols in 2usize..17, seed in 0u64..1000) {
        let x = random_tensor(vec![rows, cols], seed, 1).map(|v| v * 5.0 + 3.0).cast::<f32>();
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(x);
        let g = tape.constant(Tensor::vector(vec![1.0; cols]));
        let b = tape.constant(Tensor::vector(vec![0.0; cols]));
        let y = tape.layer_norm(v, g, b, 1e-5).unwrap();
        for r in 0..rows {
            let mean: f32 = tape.value(y).row(r).iter().sum::<f32>() / cols as f32;
            prop_assert!(mean.abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_gradients_on_random_inputs(seed in 0u64..200) {
        let ins = inputs(&[("x", random_tensor(vec![4, 8], seed, 2))]);
        let report = GradCheck::default().run("ln", &ins, &|t: &mut Tape<f64>, b: &Bound| {
            let g = t.constant(Tensor::vector(vec![1.0; 8]));
            let z = t.constant(Tensor::vector(vec![0.0; 8]));
            let y = t.layer_norm(b["x"], g, z, 1e-5)?;
            weighted_sum(t, y, seed)
        }).unwrap();
        prop_assert!(report.passed, "{:.3e} at {}", report.worst_error, report.worst_at);
    }
}
