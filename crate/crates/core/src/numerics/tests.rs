use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 1.0)
}

/// Central finite differences of `f` against the tape gradient, for every
/// element of every input. `f` must end in a scalar.
fn max_rel_error<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let eval = |ins: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs);
        t.value(l).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let denom = analytic[j].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[j] - numeric).abs() / denom);
        }
    }
    worst
}

/// Contracts `y` against fixed random weights so every output element
/// contributes a distinct amount to the scalar.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

#[test]
fn matmul_identity_and_hand_values() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let i = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let y = t.matmul(a, i).unwrap();
    assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let r = t.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let c = t.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let y = t.matmul(r, c).unwrap();
    assert_eq!(t.shape(y), &[1, 1]);
    assert_eq!(t.value(y).data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let err = t.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
    assert!(matches!(t.matmul(a, b), Err(crate::MoefError::Dimension(_))));
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = [rand_tensor(&mut rng, &[5, 7]), rand_tensor(&mut rng, &[7, 3])];
    let err = max_rel_error(&inputs, 1e-6, |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 1)
    });
    assert!(err < 1e-6, "rel error {err}");

    let inputs = [rand_tensor(&mut rng, &[5, 7]), rand_tensor(&mut rng, &[3, 7])];
    let err = max_rel_error(&inputs, 1e-6, |t, v| {
        let y = t.matmul_t(v[0], v[1]).unwrap();
        weighted_sum(t, y, 2)
    });
    assert!(err < 1e-6, "rel error {err}");
}

#[test]
fn elementwise_spot_values() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::scalar(0.0));
    let s = t.sigmoid(z);
    assert_eq!(t.value(s).data()[0], 0.5);
    let l = t.log1p(z).unwrap();
    assert_eq!(t.value(l).data()[0], 0.0);

    let bad = t.constant(Tensor::scalar(-1.5));
    assert!(matches!(t.log1p(bad), Err(crate::MoefError::Domain(_))));

    let a = t.constant(Tensor::zeros(&[2]));
    let b = t.constant(Tensor::zeros(&[3]));
    assert!(matches!(t.add(a, b), Err(crate::MoefError::Dimension(_))));
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for op in [Unary::Sigmoid, Unary::Tanh, Unary::Log1p] {
        let mut x = rand_tensor(&mut rng, &[4, 6]);
        if op == Unary::Log1p {
            x.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.1);
        }
        let err = max_rel_error(&[x], 1e-6, |t, v| {
            let y = t.unary(op, v[0]).unwrap();
            weighted_sum(t, y, 3)
        });
        assert!(err < 1e-6, "{op:?} rel error {err}");
    }
    // Keep ReLU inputs away from the kink.
    let mut x = rand_tensor(&mut rng, &[4, 6]);
    x.data_mut().iter_mut().for_each(|v| *v += 0.05f64.copysign(*v));
    let err = max_rel_error(&[x], 1e-6, |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 4)
    });
    assert!(err < 1e-6, "relu rel error {err}");

    for op in [Binary::Add, Binary::Sub, Binary::Mul] {
        let ins = [rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[3, 4])];
        let err = max_rel_error(&ins, 1e-6, |t, v| {
            let y = t.binary(op, v[0], v[1]).unwrap();
            weighted_sum(t, y, 5)
        });
        assert!(err < 1e-6, "{op:?} rel error {err}");
    }
}

#[test]
fn broadcast_and_structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ins = [
        rand_tensor(&mut rng, &[4, 3]),
        rand_tensor(&mut rng, &[3]),
        rand_tensor(&mut rng, &[4, 1]),
        rand_tensor(&mut rng, &[2, 3]),
    ];
    let err = max_rel_error(&ins, 1e-6, |t, v| {
        let a = t.add_row(v[0], v[1]).unwrap();
        let b = t.mul_row(a, v[1]).unwrap();
        let c = t.mul_col(b, v[2]).unwrap();
        let d = t.concat_cols(&[c, v[0]]).unwrap();
        let e = t.slice_cols(d, 2, 3).unwrap();
        let f = t.select_rows(e, &[3, 0, 0, 2]).unwrap();
        let g = t.reshape(f, vec![2, 6]).unwrap();
        let h = t.scale(g, 0.7);
        let m = t.mean_rows(v[3]).unwrap();
        let m = t.tanh(m);
        let s1 = weighted_sum(t, h, 6);
        let s2 = weighted_sum(t, m, 7);
        let s = t.add(s1, s2).unwrap();
        let n = t.mean(v[0]);
        t.add(s, n).unwrap()
    });
    assert!(err < 1e-6, "rel error {err}");
}

#[test]
fn softmax_layer_norm_and_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_tensor(&mut rng, &[2, 3, 4]);
    for axis in 0..3 {
        let err = max_rel_error(std::slice::from_ref(&x), 1e-6, |t, v| {
            let y = t.softmax(v[0], axis).unwrap();
            weighted_sum(t, y, 8)
        });
        assert!(err < 1e-6, "softmax axis {axis} rel error {err}");
    }

    let x = rand_tensor(&mut rng, &[3, 5]);
    let err = max_rel_error(&[x], 1e-6, |t, v| {
        let y = t.layer_norm(v[0]).unwrap();
        weighted_sum(t, y, 9)
    });
    assert!(err < 1e-6, "layer_norm rel error {err}");

    // batch 2, 2 heads, 3 queries, 4 keys, one masked key and one masked query
    let ins = [
        rand_tensor(&mut rng, &[6, 4]),
        rand_tensor(&mut rng, &[8, 4]),
        rand_tensor(&mut rng, &[8, 6]),
    ];
    let spec = AttentionSpec {
        batch: 2,
        heads: 2,
        q_len: 3,
        k_len: 4,
        key_mask: Some(vec![true, true, false, true, true, true, true, true]),
        query_mask: Some(vec![true, true, true, true, false, true]),
    };
    let err = max_rel_error(&ins, 1e-6, |t, v| {
        let y = t.attention(v[0], v[1], v[2], spec.clone()).unwrap();
        weighted_sum(t, y, 10)
    });
    assert!(err < 1e-6, "attention rel error {err}");
}

#[test]
fn logloss_gradient_and_values() {
    let mut t = Tape::new();
    let p = t.constant(Tensor::scalar(0.5));
    for y in [0.0, 1.0] {
        let l = t.logloss(p, &[y]).unwrap();
        assert!((t.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }
    assert!(t.logloss(p, &[]).is_err());

    let v = logloss(&[1.0, 0.0], &[0.9, 0.1]).unwrap();
    assert!((v - 0.105_360_515_657_826_3).abs() < 1e-12);
    let near = logloss(&[1.0], &[1.0 - 1e-7]).unwrap();
    assert!((near - 1e-7).abs() < 1e-12);
    // clipping keeps the loss finite at the boundaries
    assert!(logloss(&[1.0, 0.0], &[0.0, 1.0]).unwrap().is_finite());

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_tensor(&mut rng, &[5, 1]);
    let labels = [1.0, 0.0, 0.0, 1.0, 1.0];
    let err = max_rel_error(&[x], 1e-6, |t, v| {
        let p = t.sigmoid(v[0]);
        t.logloss(p, &labels).unwrap()
    });
    assert!(err < 1e-6, "logloss rel error {err}");
}

#[test]
fn backward_of_sum_is_ones_and_scalar_sigmoid_matches_hand_derivative() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::filled(&[2, 3, 2], 0.3));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));

    let (w0, x0) = (0.7, -1.3);
    let mut t = Tape::new();
    let w = t.leaf(Tensor::scalar(w0));
    let x = t.leaf(Tensor::scalar(x0));
    let wx = t.mul(w, x).unwrap();
    let y = t.sigmoid(wx);
    let g = t.backward(y).unwrap();
    let s = 1.0 / (1.0 + (-(w0 * x0) as f64).exp());
    let dw = s * (1.0 - s) * x0;
    let dx = s * (1.0 - s) * w0;
    assert!((g.wrt(w).unwrap().data()[0] - dw).abs() < 1e-15);
    assert!((g.wrt(x).unwrap().data()[0] - dx).abs() < 1e-15);
}

#[test]
fn backward_rejects_non_scalar_and_second_call() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros(&[2]));
    assert!(matches!(t.backward(x), Err(crate::MoefError::Contract(_))));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(crate::MoefError::Contract(_))));
    t.reset_grads();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn reused_leaf_accumulates_each_use() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(3.0));
    let y = t.mul(x, x).unwrap();
    let z = t.add(y, x).unwrap();
    let g = t.backward(z).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[7.0]);
}

#[test]
fn softmax_spot_values() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::row_vector(vec![0.0, 0.0]));
    let y = t.softmax(x, 1).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    let x = t.constant(Tensor::row_vector(vec![2f64.ln(), 0.0]));
    let y = t.softmax(x, 1).unwrap();
    let d = t.value(y).data();
    assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 1.0 / 3.0).abs() < 1e-15);
    assert!(t.softmax(x, 2).is_err());
}

#[test]
fn gather_produces_sparse_row_gradients() {
    let mut store = ParamStore::new();
    let table = store
        .add("emb.t", Tensor::new(vec![4, 2], (0..8).map(f64::from).collect()).unwrap())
        .unwrap();
    let mut t = Tape::with_params(&store);
    let e = t.gather(table, &[Some(2), None, Some(2), Some(0)]).unwrap();
    assert_eq!(t.value(e).data(), &[4.0, 5.0, 0.0, 0.0, 4.0, 5.0, 0.0, 1.0]);
    let s = t.sum(e);
    let g = t.backward(s).unwrap();
    match g.param(table).unwrap() {
        ParamGrad::Rows { rows, .. } => {
            assert_eq!(rows.len(), 2);
            assert_eq!(rows[&2], vec![2.0, 2.0]);
            assert_eq!(rows[&0], vec![1.0, 1.0]);
        }
        other => panic!("expected sparse rows, got {other:?}"),
    }
    assert!(t.gather(table, &[Some(4)]).is_err());
}

#[test]
fn adagrad_hand_arithmetic() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(0.0)).unwrap();
    let mut opt = Adagrad::new(0.01, 0.0, &store);
    let step = |store: &mut ParamStore, opt: &mut Adagrad, g: f64| {
        let mut t = Tape::with_params(store);
        let v = t.param(p);
        let s = t.scale(v, g);
        let grads = t.backward(s).unwrap();
        drop(t);
        opt.step(store, &grads).unwrap();
    };
    step(&mut store, &mut opt, 1.0);
    assert!((store.get(p).value.data()[0] + 0.01).abs() < 1e-15);
    step(&mut store, &mut opt, 1.0);
    let expected = -0.01 - 0.01 / 2f64.sqrt();
    assert!((store.get(p).value.data()[0] - expected).abs() < 1e-15);
    assert!((expected + 0.017_071_1).abs() < 1e-7);
    let acc = opt.accumulators()[0][0];
    step(&mut store, &mut opt, 0.0);
    assert!((store.get(p).value.data()[0] - expected).abs() < 1e-15);
    assert_eq!(opt.accumulators()[0][0], acc);
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("frozen.a", Tensor::scalar(2.0)).unwrap();
    let b = store.add("live.b", Tensor::scalar(3.0)).unwrap();
    store.set_group_trainable("frozen", false);
    let mut t = Tape::with_params(&store);
    let (va, vb) = (t.param(a), t.param(b));
    let y = t.mul(va, vb).unwrap();
    let g = t.backward(y).unwrap();
    assert!(g.param(a).is_none());
    assert_eq!(g.param(b).unwrap().to_dense(1), vec![2.0]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(logits.clone()));
        let y = t.softmax(x, 1).unwrap();
        let shifted = t.constant(Tensor::row_vector(logits.iter().map(|v| v + shift).collect()));
        let ys = t.softmax(shifted, 1).unwrap();
        let total: f64 = t.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(t.value(y).data().iter().all(|&p| p > 0.0));
        prop_assert!(t.value(y).max_abs_diff(t.value(ys)) < 1e-12);
    }

    #[test]
    fn adagrad_accumulators_never_decrease(
        grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..8),
    ) {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::zeros(&[3])).unwrap();
        let mut opt = Adagrad::new(0.01, Adagrad::DEFAULT_EPSILON, &store);
        let mut prev = vec![0.0; 3];
        for g in grads {
            let mut t = Tape::with_params(&store);
            let v = t.param(p);
            let w = t.constant(Tensor::new(vec![3], g).unwrap());
            let y = t.mul(v, w).unwrap();
            let s = t.sum(y);
            let gr = t.backward(s).unwrap();
            drop(t);
            opt.step(&mut store, &gr).unwrap();
            let acc = &opt.accumulators()[0];
            prop_assert!(acc.iter().zip(&prev).all(|(a, b)| a >= b && *a >= 0.0));
            prev = acc.clone();
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in 0u64..1000) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut rng, &[4, 5]);
            let b = rand_tensor(&mut rng, &[3, 5]);
            let mut t = Tape::new();
            let (va, vb) = (t.leaf(a), t.leaf(b));
            let y = t.matmul_t(va, vb).unwrap();
            let y = t.tanh(y);
            let s = t.softmax(y, 1).unwrap();
            let l = weighted_sum(&mut t, s, seed);
            let g = t.backward(l).unwrap();
            (t.value(l).clone(), g.wrt(va).unwrap().clone(), g.wrt(vb).unwrap().clone())
        };
        let (l1, a1, b1) = run();
        let (l2, a2, b2) = run();
        prop_assert_eq!(l1.data()[0].to_bits(), l2.data()[0].to_bits());
        prop_assert!(a1.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(b1.data().iter().zip(b2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn forward_outputs_stay_finite(values in prop::collection::vec(-50.0f64..50.0, 6)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 3], values).unwrap());
        let s = t.sigmoid(x);
        let h = t.tanh(x);
        let sm = t.softmax(x, 1).unwrap();
        let ln = t.layer_norm(x).unwrap();
        for v in [s, h, sm, ln] {
            prop_assert!(t.value(v).is_finite());
        }
        prop_assert!(t.value(s).data().iter().all(|&p| p > 0.0 && p <= 1.0));
        prop_assert!(t.value(h).data().iter().all(|&p| p.abs() <= 1.0));
    }
}

#[test]
fn sigmoid_is_stable_for_large_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let x: f64 = rng.gen_range(-800.0..800.0);
        let s = super::tape::sigmoid(x);
        assert!(s.is_finite() && (0.0..=1.0).contains(&s));
    }
}

#[test]
fn activations_propagate_nan() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 3], vec![f64::NAN, -1.0, 2.0]).unwrap());
    let r = tape.relu(x);
    let v = tape.value(r).data();
    assert!(v[0].is_nan());
    assert_eq!(&v[1..], &[0.0, 2.0]);
    let s = tape.sigmoid(x);
    assert!(tape.value(s).data()[0].is_nan());
    assert!(!tape.value(s).is_finite());
}
