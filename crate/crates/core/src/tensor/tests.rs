use super::gradcheck::relative_error;
use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arr(shape: &[usize], data: &[f64]) -> Array {
    Array::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Reduces an arbitrary output to a scalar through fixed random weights so
/// that every output coordinate contributes to the checked gradient.
fn project(tape: &mut Tape, out: Tensor, weights: &[f64]) -> Tensor {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(Array::new(shape, weights[..tape.value(out).len()].to_vec()).unwrap());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// Maximum relative error between backward and central differences (eps
/// 1e-5) over every coordinate of every input.
fn fd_check<F>(inputs: &[Array], proj: &[f64], build: F) -> f64
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    let eval = |vals: &[Array]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<_> = vals.iter().map(|a| tape.constant(a.clone())).collect();
        let out = build(&mut tape, &leaves);
        let loss = project(&mut tape, out, proj);
        tape.scalar_value(loss)
    };
    let mut tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|a| tape.variable(a.clone())).collect();
    let out = build(&mut tape, &leaves);
    let loss = project(&mut tape, out, proj);
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    let eps = 1e-5;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = tape
            .grad(*leaf)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let e = relative_error(analytic[j], numeric, gradcheck::REL_ERR_FLOOR);
            worst = worst.max(e);
        }
    }
    worst
}

fn random_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::uniform(shape, 1.0, rng)
}

/// Random values kept at least `margin` away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Array {
    let mut a = random_array(rng, shape);
    for v in a.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin } * (1.0 + rng.random::<f64>());
        }
    }
    a
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::new();
    let i = tape.constant(arr(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(arr(&[2, 2], &[3.5, -1.0, 2.0, 7.0]));
    let out = tape.matmul(i, m).unwrap();
    assert_eq!(tape.value(out).data(), &[3.5, -1.0, 2.0, 7.0]);

    let a = tape.constant(arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(arr(&[2, 1], &[5.0, 6.0]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).shape(), &[2, 1]);
    assert_eq!(tape.value(out).data(), &[17.0, 39.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Array::zeros(&[2, 3]));
    let b = tape.constant(Array::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Dimension {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
}

#[test]
fn matmul_gradient_of_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_array(&mut rng, &[3, 4]);
    let b = random_array(&mut rng, &[4, 2]);
    let ones = vec![1.0; 6];
    let err = fd_check(&[a, b], &ones, |t, x| t.matmul(x[0], x[1]).unwrap());
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn relu_sigmoid_and_gelu_values() {
    let mut tape = Tape::new();
    let x = tape.constant(arr(&[3], &[-1.0, 0.0, 2.0]));
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = tape.constant(Array::scalar(0.0));
    let s = tape.sigmoid(z);
    assert_eq!(tape.scalar_value(s), 0.5);
    assert!(close(ops::gelu(0.0), 0.0, 0.0));
    assert_eq!(ops::GELU_SQRT_2_OVER_PI, (2.0 / std::f64::consts::PI).sqrt());
}

#[test]
fn gelu_gradient_at_half_matches_finite_differences() {
    let err = fd_check(&[Array::scalar(0.5)], &[1.0], |t, x| t.gelu(x[0]));
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn binary_ops_reject_non_broadcastable_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Array::zeros(&[2, 3]));
    let b = tape.constant(Array::zeros(&[2]));
    assert!(matches!(tape.add(a, b), Err(TensorError::Dimension { .. })));
    assert!(matches!(tape.mul(a, b), Err(TensorError::Dimension { .. })));
    let row = tape.constant(arr(&[3], &[1.0, 2.0, 3.0]));
    let s = tape.add(a, row).unwrap();
    assert_eq!(tape.value(s).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
}

#[test]
fn layer_norm_constant_row_gives_bias() {
    let mut tape = Tape::new();
    let x = tape.constant(arr(&[1, 4], &[2.5; 4]));
    let g = tape.constant(arr(&[4], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(arr(&[4], &[0.1, 0.2, 0.3, 0.4]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.1, 0.2, 0.3, 0.4]);
}

#[test]
fn layer_norm_two_element_row() {
    let mut tape = Tape::new();
    let x = tape.constant(arr(&[1, 2], &[1.0, 3.0]));
    let g = tape.constant(arr(&[2], &[1.0, 1.0]));
    let b = tape.constant(arr(&[2], &[0.0, 0.0]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    // mean 2, variance 1: (x - 2) / sqrt(1 + 1e-5)
    let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!(close(expected, 0.999_995_000_037_5, 1e-12));
    let out = tape.value(y).data();
    assert!(close(out[0], -expected, 1e-15));
    assert!(close(out[1], expected, 1e-15));
}

#[test]
fn layer_norm_rejects_zero_width() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::zeros(&[2, 0]));
    let g = tape.constant(Array::zeros(&[0]));
    let b = tape.constant(Array::zeros(&[0]));
    assert!(matches!(tape.layer_norm(x, g, b, 1e-5), Err(TensorError::Shape { .. })));
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(arr(&[1, 3], &[0.0, 0.0, 0.0]));
    let y = tape.softmax_rows(x).unwrap();
    for v in tape.value(y).data() {
        assert!(close(*v, 1.0 / 3.0, 1e-15));
    }
    let x = tape.constant(arr(&[1, 2], &[1000.0, 0.0]));
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y).data();
    assert!(v.iter().all(|p| p.is_finite()));
    assert!(close(v[0], 1.0, 1e-15) && v[1] < 1e-300);
    let x = tape.constant(arr(&[1, 2], &[2f64.ln(), 1f64.ln()]));
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y).data();
    assert!(close(v[0], 2.0 / 3.0, 1e-15) && close(v[1], 1.0 / 3.0, 1e-15));
}

#[test]
fn masked_cross_entropy_examples() {
    let mut tape = Tape::new();
    let logits = tape.constant(Array::zeros(&[2, 4]));
    let (loss, m) = tape.masked_cross_entropy(logits, &[IGNORE_INDEX, 2]).unwrap();
    assert_eq!(m, 1);
    assert!(close(tape.scalar_value(loss), 4f64.ln(), 1e-15));

    let logits = tape.constant(arr(&[2, 3], &[800.0, 0.0, 0.0, 0.0, 0.0, 800.0]));
    let (loss, _) = tape.masked_cross_entropy(logits, &[0, 2]).unwrap();
    assert_eq!(tape.scalar_value(loss), 0.0);

    let p1 = [0.5, 0.5 / 3.0, 0.5 / 3.0, 0.5 / 3.0];
    let row1: Vec<f64> = p1.iter().map(|p: &f64| p.ln()).collect();
    let row2 = vec![0.25f64.ln(); 4];
    let logits = tape.constant(arr(&[3, 4], &[row1, row2, vec![0.0; 4]].concat()));
    let (loss, m) = tape.masked_cross_entropy(logits, &[0, 1, IGNORE_INDEX]).unwrap();
    assert_eq!(m, 2);
    let expected = (2f64.ln() + 4f64.ln()) / 2.0;
    assert!(close(expected, 1.039_720_770_839_918, 1e-12));
    assert!(close(tape.scalar_value(loss), expected, 1e-12));
}

#[test]
fn masked_cross_entropy_errors() {
    let mut tape = Tape::new();
    let logits = tape.constant(Array::zeros(&[2, 4]));
    assert_eq!(
        tape.masked_cross_entropy(logits, &[IGNORE_INDEX, IGNORE_INDEX])
            .unwrap_err(),
        TensorError::NoSupervisedPositions
    );
    assert!(matches!(
        tape.masked_cross_entropy(logits, &[4, 0]),
        Err(TensorError::LabelOutOfRange { label: 4, classes: 4 })
    ));
}

#[test]
fn l2_alignment_examples() {
    let mut tape = Tape::new();
    let f = tape.constant(arr(&[1, 2], &[1.0, 0.0]));
    let k = tape.variable(arr(&[1, 2], &[0.0, 1.0]));
    let loss = tape.l2_alignment(&[(f, k)]).unwrap();
    assert_eq!(tape.scalar_value(loss), 2.0);

    let same = tape.l2_alignment(&[(f, f)]).unwrap();
    assert_eq!(tape.scalar_value(same), 0.0);

    // per-layer values 2 and 4 average to 3
    let f2 = tape.constant(arr(&[2, 2], &[0.0, 0.0, 0.0, 0.0]));
    let k2 = tape.variable(arr(&[2, 2], &[2.0, 0.0, 0.0, 2.0]));
    let two = tape.l2_alignment(&[(f, k), (f2, k2)]).unwrap();
    assert_eq!(tape.scalar_value(two), 3.0);

    assert_eq!(tape.l2_alignment(&[]).unwrap_err(), TensorError::Empty("l2_alignment"));
    assert!(matches!(
        tape.l2_alignment(&[(f, k2)]),
        Err(TensorError::Dimension { .. })
    ));
}

#[test]
fn l2_alignment_gradient_reaches_adapter_side_only() {
    let mut tape = Tape::new();
    let f = tape.variable(arr(&[1, 2], &[1.0, 0.0]));
    let k = tape.variable(arr(&[1, 2], &[0.0, 1.0]));
    let loss = tape.l2_alignment(&[(f, k)]).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(k).unwrap(), &[-2.0, 2.0]);
    assert!(tape.grad(f).is_none());
}

#[test]
fn backward_linear_and_quadratic() {
    let mut tape = Tape::new();
    let x = tape.variable(arr(&[3], &[0.3, -1.0, 5.0]));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.variable(arr(&[2], &[1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    // one edge per operand use
    assert_eq!(tape.parents(sq), vec![x.id(), x.id()]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.variable(arr(&[2], &[1.0, 2.0]));
    assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
}

#[test]
fn tensor_used_twice_doubles_gradient() {
    let mut tape = Tape::new();
    let x = tape.variable(arr(&[2], &[0.7, -0.2]));
    let once = tape.sum(x);
    tape.backward(once).unwrap();
    let g1 = tape.grad(x).unwrap().to_vec();

    let mut tape = Tape::new();
    let x = tape.variable(arr(&[2], &[0.7, -0.2]));
    let twice = tape.add(x, x).unwrap();
    let s = tape.sum(twice);
    tape.backward(s).unwrap();
    let g2 = tape.grad(x).unwrap();
    assert_eq!(g2, &[2.0 * g1[0], 2.0 * g1[1]]);
}

#[test]
fn composite_loss_gradient_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_array(&mut rng, &[2, 3]);
    let lambda = 0.5;
    let run = |coef_k: f64, coef_s: f64| {
        let mut tape = Tape::new();
        let wt = tape.variable(w.clone());
        let logits = tape.scale(wt, 2.0);
        let (lk, _) = tape.masked_cross_entropy(logits, &[1, IGNORE_INDEX]).unwrap();
        let f = tape.constant(Array::filled(&[2, 3], 0.3));
        let ls = tape.l2_alignment(&[(f, wt)]).unwrap();
        let a = tape.scale(lk, coef_k);
        let b = tape.scale(ls, coef_s);
        let total = tape.add(a, b).unwrap();
        tape.backward(total).unwrap();
        tape.grad(wt).unwrap().to_vec()
    };
    let combined = run(lambda, 1.0);
    let gk = run(1.0, 0.0);
    let gs = run(0.0, 1.0);
    for i in 0..combined.len() {
        assert!(close(combined[i], lambda * gk[i] + gs[i], 1e-15));
    }
}

#[test]
fn every_differentiable_op_matches_finite_differences() {
    let mut worst = std::collections::BTreeMap::<&str, f64>::new();
    let mut record = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let proj: Vec<f64> = (0..64).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let m = 1 + rng.random_range(0..4usize);
        let k = 1 + rng.random_range(0..4usize);
        let n = 1 + rng.random_range(0..4usize);

        let a = random_array(&mut rng, &[m, k]);
        let b = random_array(&mut rng, &[k, n]);
        record(
            "matmul",
            fd_check(&[a.clone(), b], &proj, |t, x| t.matmul(x[0], x[1]).unwrap()),
        );
        record(
            "transpose",
            fd_check(&[a.clone()], &proj, |t, x| t.transpose(x[0]).unwrap()),
        );

        let c = random_array(&mut rng, &[m, k]);
        let row = random_array(&mut rng, &[k]);
        record(
            "add",
            fd_check(&[a.clone(), c.clone()], &proj, |t, x| t.add(x[0], x[1]).unwrap()),
        );
        record(
            "add_row",
            fd_check(&[a.clone(), row.clone()], &proj, |t, x| t.add(x[0], x[1]).unwrap()),
        );
        record(
            "sub",
            fd_check(&[a.clone(), c.clone()], &proj, |t, x| t.sub(x[0], x[1]).unwrap()),
        );
        record(
            "mul",
            fd_check(&[a.clone(), c.clone()], &proj, |t, x| t.mul(x[0], x[1]).unwrap()),
        );
        record(
            "mul_row",
            fd_check(&[a.clone(), row], &proj, |t, x| t.mul(x[0], x[1]).unwrap()),
        );
        record("scale", fd_check(&[a.clone()], &proj, |t, x| t.scale(x[0], -1.7)));

        let kinked = away_from_zero(&mut rng, &[m, k], 1e-3);
        record("relu", fd_check(&[kinked], &proj, |t, x| t.relu(x[0])));
        record("gelu", fd_check(&[a.clone()], &proj, |t, x| t.gelu(x[0])));
        record("sigmoid", fd_check(&[a.clone()], &proj, |t, x| t.sigmoid(x[0])));
        record("mean", fd_check(&[a.clone()], &proj, |t, x| t.mean(x[0]).unwrap()));

        let d = 2 + rng.random_range(0..4usize);
        let xs = random_array(&mut rng, &[m, d]);
        let g = random_array(&mut rng, &[d]);
        let bias = random_array(&mut rng, &[d]);
        record(
            "layer_norm",
            fd_check(&[xs.clone(), g, bias], &proj, |t, x| {
                t.layer_norm(x[0], x[1], x[2], 1e-5).unwrap()
            }),
        );
        record(
            "softmax",
            fd_check(&[xs.clone()], &proj, |t, x| t.softmax_rows(x[0]).unwrap()),
        );
        let rows: Vec<usize> = (0..3).map(|_| rng.random_range(0..m)).collect();
        record(
            "gather_rows",
            fd_check(&[xs.clone()], &proj, |t, x| t.gather_rows(x[0], &rows).unwrap()),
        );

        let labels: Vec<i64> = (0..m)
            .map(|i| {
                if i == 0 || rng.random::<f64>() < 0.6 {
                    rng.random_range(0..d) as i64
                } else {
                    IGNORE_INDEX
                }
            })
            .collect();
        record(
            "masked_cross_entropy",
            fd_check(&[xs.clone()], &proj, |t, x| {
                t.masked_cross_entropy(x[0], &labels).unwrap().0
            }),
        );
        let target: Vec<f64> = (0..m * d).map(|_| rng.random::<f64>()).collect();
        record(
            "mse",
            fd_check(&[xs.clone()], &proj, |t, x| t.mse(x[0], &target).unwrap()),
        );
        let fconst = random_array(&mut rng, &[m, d]);
        let fconst2 = random_array(&mut rng, &[m, d]);
        let k2 = random_array(&mut rng, &[m, d]);
        record(
            "l2_alignment",
            fd_check(&[xs.clone(), k2], &proj, |t, x| {
                let f1 = t.constant(fconst.clone());
                let f2 = t.constant(fconst2.clone());
                t.l2_alignment(&[(f1, x[0]), (f2, x[1])]).unwrap()
            }),
        );

        let experts = 2 + rng.random_range(0..2usize);
        let w = random_array(&mut rng, &[m, experts]);
        let mut ins = vec![w];
        for _ in 0..experts {
            ins.push(random_array(&mut rng, &[m, d]));
        }
        record(
            "weighted_sum",
            fd_check(&ins, &proj, |t, x| t.weighted_sum(x[0], &x[1..]).unwrap()),
        );

        let (batch, seq, heads) = (1 + rng.random_range(0..2usize), 2 + rng.random_range(0..2usize), 2);
        let width = 4;
        let q = random_array(&mut rng, &[batch * seq, width]);
        let kk = random_array(&mut rng, &[batch * seq, width]);
        let v = random_array(&mut rng, &[batch * seq, width]);
        let mask: Vec<bool> = (0..batch * seq)
            .map(|i| i % seq == 0 || rng.random::<f64>() < 0.7)
            .collect();
        record(
            "attention",
            fd_check(&[q, kk, v], &proj, |t, x| {
                t.attention(x[0], x[1], x[2], &mask, batch, seq, heads).unwrap()
            }),
        );
    }
    for (name, e) in &worst {
        assert!(*e < 1e-6, "{name}: max relative error {e}");
    }
    assert_eq!(worst.len(), 20);
}

#[test]
fn adamw_zero_gradient_without_decay_is_fixed_point() {
    let mut store = ParameterStore::new();
    store.insert("w", arr(&[3], &[1.5, -0.25, 0.0])).unwrap();
    store.set_trainable(["w"]).unwrap();
    let before = store.value("w").unwrap().clone();
    let mut opt = OptimizerState::new(AdamW {
        weight_decay: 0.0,
        lr: 0.1,
        ..AdamW::default()
    });
    for _ in 0..3 {
        store.accumulate_grad("w", &[0.0; 3]).unwrap();
        opt.step(&mut store, 1.0).unwrap();
    }
    assert!(store.value("w").unwrap().bitwise_eq(&before));
}

#[test]
fn adamw_first_step_moves_by_learning_rate() {
    let mut store = ParameterStore::new();
    store.insert("w", Array::scalar(1.0)).unwrap();
    store.set_trainable(["w"]).unwrap();
    store.accumulate_grad("w", &[1.0]).unwrap();
    let mut opt = OptimizerState::new(AdamW {
        weight_decay: 0.0,
        lr: 0.1,
        ..AdamW::default()
    });
    opt.step(&mut store, 1.0).unwrap();
    let delta = store.value("w").unwrap().data()[0] - 1.0;
    assert!(close(delta, -0.1 / (1.0 + 1e-8), 1e-15), "{delta}");
    assert!(store.grad("w").is_none());
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adamw_leaves_frozen_parameters_alone() {
    let mut store = ParameterStore::new();
    store.insert("frozen", arr(&[2], &[0.5, 0.5])).unwrap();
    store.insert("live", arr(&[2], &[0.5, 0.5])).unwrap();
    store.set_trainable(["live"]).unwrap();
    store.accumulate_grad("frozen", &[3.0, -3.0]).unwrap();
    store.accumulate_grad("live", &[3.0, -3.0]).unwrap();
    let frozen = store.value("frozen").unwrap().clone();
    let mut opt = OptimizerState::new(AdamW::default());
    opt.step(&mut store, 1.0).unwrap();
    assert!(store.value("frozen").unwrap().bitwise_eq(&frozen));
    assert!(!store.value("live").unwrap().bitwise_eq(&frozen));
    assert_eq!(opt.tracked().collect::<Vec<_>>(), vec!["live"]);
}

#[test]
fn adamw_missing_gradient_names_parameter() {
    let mut store = ParameterStore::new();
    store.insert("layer.0.w", Array::scalar(1.0)).unwrap();
    store.set_trainable(["layer.0.w"]).unwrap();
    let mut opt = OptimizerState::new(AdamW::default());
    assert_eq!(
        opt.step(&mut store, 1.0).unwrap_err(),
        TensorError::MissingGradient("layer.0.w".into())
    );
}

#[test]
fn adamw_decoupled_decay_shrinks_by_exact_factor() {
    let mut store = ParameterStore::new();
    store.insert("w", arr(&[2], &[2.0, -3.0])).unwrap();
    store.set_trainable(["w"]).unwrap();
    let hyper = AdamW {
        lr: 0.01,
        weight_decay: 0.05,
        ..AdamW::default()
    };
    let mut opt = OptimizerState::new(hyper);
    let mut expected = vec![2.0, -3.0];
    for _ in 0..5 {
        store.accumulate_grad("w", &[0.0, 0.0]).unwrap();
        opt.step(&mut store, 1.0).unwrap();
        for e in expected.iter_mut() {
            *e *= 1.0 - 0.01 * 0.05;
        }
        assert_eq!(store.value("w").unwrap().data(), expected.as_slice());
    }
}

#[test]
fn schedule_examples() {
    let s = ScheduleConfig::new(10, 110).unwrap();
    assert_eq!(lr_at(10, s), 1.0);
    assert_eq!(lr_at(110, s), 0.0);
    assert_eq!(lr_at(60, s), 0.5);
    assert_eq!(lr_at(0, s), 0.0);
    assert_eq!(lr_at(500, s), 0.0);
    assert_eq!(lr_at(0, ScheduleConfig::new(0, 4).unwrap()), 1.0);
    assert!(ScheduleConfig::new(5, 4).is_err());
}

#[test]
fn parameter_store_rejects_duplicates_and_unknown_masks() {
    let mut store = ParameterStore::new();
    store.insert("a", Array::scalar(1.0)).unwrap();
    assert_eq!(
        store.insert("a", Array::scalar(2.0)).unwrap_err(),
        TensorError::DuplicateParameter("a".into())
    );
    assert_eq!(
        store.set_trainable(["b"]).unwrap_err(),
        TensorError::UnknownParameter("b".into())
    );
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn schedule_is_continuous_and_bounded(warmup in 0usize..50, extra in 1usize..200) {
            let s = ScheduleConfig::new(warmup, warmup + extra).unwrap();
            let mut prev = lr_at(0, s);
            if warmup > 0 {
                prop_assert_eq!(prev, 0.0);
            }
            for step in 1..=s.total_steps {
                let cur = lr_at(step, s);
                prop_assert!((0.0..=1.0).contains(&cur));
                let jump = 1.0 / warmup.max(1).min(extra) as f64;
                prop_assert!((cur - prev).abs() <= jump + 1e-12);
                prev = cur;
            }
        }

        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let mut tape = Tape::new();
            let n = vals.len();
            let x = tape.constant(Array::new(vec![1, n], vals).unwrap());
            let y = tape.softmax_rows(x).unwrap();
            let total: f64 = tape.value(y).data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
