use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{attention, Ffn, LayerNorm, Linear, Mha};
use super::*;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

#[test]
fn linear_identity_and_zero_input() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
    let w = tape.input(Tensor::identity(2));
    let b = tape.input(Tensor::zeros(1, 2));
    let y = layers::linear(&mut tape, x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 3, 2, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(4, 3));
    let y = lin.forward(&mut tape, &store, x).unwrap();
    let total = tape.sum(y);
    let grads = tape.backward(total, 1.0).unwrap();
    assert!(grads.get(lin.w).unwrap().data().iter().all(|&g| g == 0.0));
    assert_eq!(grads.get(lin.b.unwrap()).unwrap().data(), &[4.0, 4.0]);
}

#[test]
fn linear_matches_naive_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (a, b) = (random(3, 4, &mut rng), random(4, 2, &mut rng));
    let mut tape = Tape::new();
    let (x, w) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let y = layers::linear(&mut tape, x, w, None).unwrap();
    let want = naive_matmul(&a, &b);
    for (g, e) in tape.value(y).data().iter().zip(want.data()) {
        assert!((g - e).abs() < 1e-15);
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(2, 3));
    let w = tape.constant(Tensor::zeros(2, 3));
    assert!(matches!(tape.matmul(x, w), Err(NdError::Shape(_))));
}

#[test]
fn softmax_examples() {
    let p = softmax_values(&Tensor::row_vector(vec![0.0; 3]), None).unwrap();
    for &x in p.data() {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = softmax_values(&Tensor::row_vector(vec![1000.0, 0.0]), None).unwrap();
    assert_eq!(p.data()[0], 1.0);
    assert!(p.data()[1] >= 0.0 && p.data()[1] < 1e-300);
    let p = softmax_values(&Tensor::row_vector(vec![2.0, 2.0]), Some(&[true, false])).unwrap();
    assert_eq!(p.data(), &[1.0, 0.0]);
    let err = softmax_values(&Tensor::row_vector(vec![2.0, 2.0]), Some(&[false, false]));
    assert!(matches!(err, Err(NdError::Contract(_))));
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row_vector(vec![3.0; 4]));
    let g = tape.constant(Tensor::row_vector(vec![2.0; 4]));
    let b = tape.constant(Tensor::row_vector(vec![0.1, 0.2, 0.3, 0.4]));
    let y = tape.layer_norm(x, g, b).unwrap();
    assert_eq!(tape.value(y).data(), &[0.1, 0.2, 0.3, 0.4]);

    let row = vec![-1.0, 1.0, -1.0, 1.0];
    let x = tape.constant(Tensor::row_vector(row.clone()));
    let g = tape.constant(Tensor::filled(1, 4, 1.0));
    let b = tape.constant(Tensor::zeros(1, 4));
    let y = tape.layer_norm(x, g, b).unwrap();
    for (a, e) in tape.value(y).data().iter().zip(&row) {
        assert!((a - e).abs() < 1e-5);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random(1, 6, &mut rng);
    let x = tape.constant(r);
    let g = tape.constant(Tensor::filled(1, 6, 1.0));
    let b = tape.constant(Tensor::zeros(1, 6));
    let y = tape.layer_norm(x, g, b).unwrap();
    let out = tape.value(y).data();
    let mean = out.iter().sum::<f64>() / 6.0;
    let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-3);
}

#[test]
fn ffn_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let f = Ffn::new(&mut store, "ffn", 3, 5, &mut rng).unwrap();

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(2, 3));
    let y = f.forward(&mut tape, &store, x).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row_vector(vec![1.0]));
    let w1 = tape.constant(Tensor::row_vector(vec![-1.0, -2.0]));
    let w2 = tape.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let y = layers::ffn(&mut tape, x, w1, w2).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0]);

    let input = random(4, 3, &mut rng);
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = f.forward(&mut tape, &store, x).unwrap();
    let w1 = store.value(f.w1);
    let w2 = store.value(f.w2);
    for r in 0..4 {
        for c in 0..3 {
            let mut s = 0.0;
            for h in 0..5 {
                let mut pre = 0.0;
                for i in 0..3 {
                    pre += input.get(r, i) * w1.get(i, h);
                }
                s += pre.max(0.0) * w2.get(h, c);
            }
            assert!((tape.value(y).get(r, c) - s).abs() < 1e-14);
        }
    }
}

#[test]
fn mha_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    assert!(matches!(Mha::new(&mut store, "bad", 8, 3, &mut rng), Err(NdError::Config(_))));

    let mut tape = Tape::new();
    let q = tape.constant(random(2, 4, &mut rng));
    let k = tape.constant(random(1, 4, &mut rng));
    let v = tape.constant(random(1, 4, &mut rng));
    let big = tape.scale(q, 1e3);
    let out = attention(&mut tape, big, k, v, 2, None).unwrap();
    for r in 0..2 {
        assert_eq!(tape.value(out).row(r), tape.value(v).row(0));
    }

    let v0 = tape.constant(Tensor::zeros(3, 4));
    let k3 = tape.constant(random(3, 4, &mut rng));
    let out = attention(&mut tape, q, k3, v0, 2, None).unwrap();
    assert!(tape.value(out).data().iter().all(|&x| x == 0.0));

    // Identical keys give equal logits, so each value receives weight 1/4.
    let keys = tape.constant(Tensor::filled(4, 4, 0.3));
    let vals = tape.constant(Tensor::from_rows(&[vec![4.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]).unwrap());
    let out = attention(&mut tape, q, keys, vals, 1, None).unwrap();
    for &x in tape.value(out).data() {
        assert!((x - 1.0).abs() < 1e-15);
    }
}

fn scalar_store(w: f64) -> (ParamStore, ParamId) {
    let mut s = ParamStore::new();
    let id = s.add("w", Tensor::scalar(w)).unwrap();
    (s, id)
}

#[test]
fn grad_check_quadratic() {
    let (mut store, id) = scalar_store(3.0);
    let mut tape = Tape::new();
    let w = tape.param(&store, id);
    let y = tape.mul(w, w).unwrap();
    let g = tape.backward(y, 1.0).unwrap();
    assert_eq!(g.get(id).unwrap().data()[0], 6.0);
    let err = grad_check(&mut store, 1e-6, Stencil::Central2, |tape, store| {
        let w = tape.param(store, id);
        tape.mul(w, w)
    })
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn grad_check_linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 4, 3, true, &mut rng).unwrap();
    let x = random(5, 4, &mut rng);
    let weights = random(5, 3, &mut rng);
    let err = grad_check(&mut store, 1e-6, Stencil::Central2, |tape, store| {
        let x = tape.constant(x.clone());
        let y = lin.forward(tape, store, x)?;
        let c = tape.constant(weights.clone());
        let y = tape.mul(y, c)?;
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

/// Every tape operation, composed into one scalar.
#[test]
fn grad_check_every_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let a = store.add("a", random(3, 4, &mut rng)).unwrap();
    let b = store.add("b", random(4, 4, &mut rng)).unwrap();
    let row = store.add("row", random(1, 4, &mut rng)).unwrap();
    let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
    store.get_mut(ln.gain).value = random(1, 4, &mut rng);
    store.get_mut(ln.bias).value = random(1, 4, &mut rng);
    let mha = Mha::new(&mut store, "mha", 4, 2, &mut rng).unwrap();
    let mask = [true, false, true, true, true, false, true, true, false];
    let weights = random(3, 8, &mut rng);

    let f = |tape: &mut Tape, store: &ParamStore| -> Result<Var, NdError> {
        let (va, vb, vr) = (tape.param(store, a), tape.param(store, b), tape.param(store, row));
        let x = tape.matmul(va, vb)?;
        let x = tape.add_row(x, vr)?;
        let x = ln.forward(tape, store, x)?;
        let t = tape.tanh(x);
        let y = mha.forward(tape, store, t, x, Some(&mask))?;
        let y = tape.add(y, x)?;
        let z = tape.matmul_nt(y, va)?;
        let z = tape.scale(z, 0.7);
        let s = tape.softmax_rows(z, Some(&mask))?;
        let cat = tape.concat_cols(&[y, s, z])?;
        let part = tape.slice_cols(cat, 1, 8)?;
        let stacked = tape.concat_rows(&[part, part])?;
        let picked = tape.gather_rows(stacked, &[4, 0, 2])?;
        let picked = tape.slice_rows(picked, 0, 3)?;
        let c = tape.constant(weights.clone());
        let prod = tape.mul(picked, c)?;
        let sum = tape.sum(prod);
        let lp = tape.log_softmax_pick(z, Some(&mask), &[Some(0), None, Some(1)])?;
        let both = tape.concat_rows(&[sum, lp])?;
        Ok(tape.sum(both))
    };
    let err = grad_check(&mut store, 1e-3, Stencil::Central4, f).unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn relu_gradient_is_masked() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::row_vector(vec![-1.0, 2.0]));
    let y = tape.relu(x);
    let s = tape.sum(y);
    let (mut store, id) = scalar_store(0.0);
    let _ = (&mut store, id);
    let g = tape.backward(s, 1.0).unwrap();
    assert!(g.iter().next().is_none());
}

#[test]
fn backward_accumulates_repeated_param_reads() {
    let (store, id) = scalar_store(2.0);
    let mut tape = Tape::new();
    let a = tape.param(&store, id);
    let b = tape.param(&store, id);
    assert_eq!(a, b);
    let y = tape.add(a, b).unwrap();
    let g = tape.backward(y, 3.0).unwrap();
    assert_eq!(g.get(id).unwrap().data()[0], 6.0);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    Linear::new(&mut store, "l", 7, 5, true, &mut rng).unwrap();
    store.add("odd", Tensor::row_vector(vec![0.1, 1.0 / 3.0, f64::MIN_POSITIVE, -1e300])).unwrap();
    let text = store.to_checkpoint(serde_json::json!({"k": 1})).to_json();
    let back = ParamStore::from_checkpoint(&Checkpoint::from_json(&text).unwrap()).unwrap();
    for (p, q) in store.iter().zip(back.iter()) {
        assert_eq!(p.name, q.name);
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.value), bits(&q.value));
    }
    let mut bad = Checkpoint::from_json(&text).unwrap();
    bad.version = 99;
    assert!(ParamStore::from_checkpoint(&bad).is_err());
}

fn tensor_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1e3f64..1e3, rows * cols).prop_map(move |d| Tensor::from_vec(rows, cols, d).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in tensor_strategy(3, 5), mask in prop::collection::vec(any::<bool>(), 15)) {
        let mut mask = mask;
        for r in 0..3 {
            mask[r * 5 + r] = true;
        }
        let p = softmax_values(&x, Some(&mask)).unwrap();
        prop_assert!(p.is_finite());
        for r in 0..3 {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for c in 0..5 {
                if !mask[r * 5 + c] {
                    prop_assert_eq!(p.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn attention_is_key_permutation_equivariant(
        seed in 0u64..1000,
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mha = Mha::new(&mut store, "mha", 4, 2, &mut rng).unwrap();
        let q = random(2, 4, &mut rng);
        let kv = random(5, 4, &mut rng);
        let mask: Vec<bool> = (0..10).map(|i| i % 5 != 3 || i == 3).collect();

        let mut tape = Tape::new();
        let qv = tape.constant(q.clone());
        let kvv = tape.constant(kv);
        let out = mha.forward(&mut tape, &store, qv, kvv, Some(&mask)).unwrap();
        let permuted = tape.gather_rows(kvv, &perm).unwrap();
        let pmask: Vec<bool> = (0..2).flat_map(|r| perm.iter().map(move |&c| (r, c))).map(|(r, c)| mask[r * 5 + c]).collect();
        let out2 = mha.forward(&mut tape, &store, qv, permuted, Some(&pmask)).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(out2).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ops_stay_finite(x in tensor_strategy(2, 4)) {
        let mut tape = Tape::new();
        let v = tape.input(x);
        let t = tape.tanh(v);
        let g = tape.constant(Tensor::filled(1, 4, 1.0));
        let b = tape.constant(Tensor::zeros(1, 4));
        let n = tape.layer_norm(v, g, b).unwrap();
        let s = tape.softmax_rows(v, None).unwrap();
        let z = tape.matmul_nt(v, v).unwrap();
        let lp = tape.log_softmax_pick(v, None, &[Some(0), Some(3)]).unwrap();
        for var in [t, n, s, z, lp] {
            prop_assert!(tape.value(var).is_finite());
        }
        let total = tape.sum(lp);
        prop_assert!(tape.backward(total, 1.0).is_ok());
    }
}
