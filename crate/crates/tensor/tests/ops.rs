// oracles index explicitly to mirror the formulas
#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use htgnn_tensor::gradcheck::{check_gradients, GradCheckConfig};
use htgnn_tensor::{NormStats, ParamStore, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at2(i, p) * b.at2(p, j);
            }
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

/// Direct sliding-window cross-correlation, one output at a time.
fn naive_conv1d(x: &Tensor, w: &Tensor, b: &[f64], padding: usize) -> Vec<f64> {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let len_out = len + 2 * padding - k + 1;
    let mut out = vec![0.0; c_out * len_out];
    for co in 0..c_out {
        for t in 0..len_out {
            let mut s = b[co];
            for ci in 0..c_in {
                for kk in 0..k {
                    let pos = (t + kk) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        s += w.data()[(co * c_in + ci) * k + kk] * x.data()[ci * len + pos as usize];
                    }
                }
            }
            out[co * len_out + t] = s;
        }
    }
    out
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::new();
    let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let out = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let b = tape.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let want = naive_matmul(&a, &b);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a), tape.constant(b));
    let out = tape.matmul(va, vb).unwrap();
    assert!(tape.value(out).max_abs_diff(&want) < 1e-12);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
}

#[test]
fn conv1d_box_sum_and_bias_only() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 4, vec![1.0; 4]).unwrap());
    let w = tape.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0]));
    let y = tape.conv1d(x, w, b, 0).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 3]);
    assert_eq!(tape.value(y).data(), &[2.0, 2.0, 2.0]);

    let x = tape.constant(Tensor::matrix(2, 6, (0..12).map(f64::from).collect()).unwrap());
    let w = tape.constant(Tensor::zeros(&[3, 2, 4]));
    let b = tape.constant(Tensor::vector(vec![0.5, -1.0, 2.0]));
    let y = tape.conv1d(x, w, b, 0).unwrap();
    assert_eq!(tape.value(y).shape(), &[3, 3]);
    for co in 0..3 {
        for t in 0..3 {
            assert_eq!(tape.value(y).at2(co, t), [0.5, -1.0, 2.0][co]);
        }
    }
}

#[test]
fn conv1d_matches_sliding_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for padding in [0, 1, 4] {
        let x = rand_tensor(&mut rng, &[2, 10]);
        let w = rand_tensor(&mut rng, &[3, 2, 3]);
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = naive_conv1d(&x, &w, &b, padding);
        let mut tape = Tape::new();
        let (vx, vw, vb) = (
            tape.constant(x),
            tape.constant(w),
            tape.constant(Tensor::vector(b)),
        );
        let y = tape.conv1d(vx, vw, vb, padding).unwrap();
        let got = tape.value(y).data();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn conv1d_batched_equals_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[2, 9])).collect();
    let w = rand_tensor(&mut rng, &[4, 2, 5]);
    let b = rand_tensor(&mut rng, &[4]);
    let mut tape = Tape::new();
    let stacked: Vec<f64> = xs.iter().flat_map(|x| x.data().to_vec()).collect();
    let vx = tape.constant(Tensor::new(vec![3, 2, 9], stacked).unwrap());
    let (vw, vb) = (tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.conv1d(vx, vw, vb, 2).unwrap();
    assert_eq!(tape.value(y).shape(), &[3, 4, 9]);
    for (i, x) in xs.iter().enumerate() {
        let want = naive_conv1d(x, &w, b.data(), 2);
        for (g, w) in tape.value(y).row(i).iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn conv1d_kernel_longer_than_window_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 5]));
    let b = tape.constant(Tensor::zeros(&[1]));
    assert!(matches!(
        tape.conv1d(x, w, b, 0),
        Err(TensorError::WindowTooShort { len: 4, kernel: 5 })
    ));
}

#[test]
fn activation_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, -1.0]));
    let s = tape.silu(x);
    assert_eq!(tape.value(s).data()[0], 0.0);
    // -1 * sigmoid(-1) = -1 / (1 + e)
    assert!((tape.value(s).data()[1] - (-0.268_941_421_369_995_1)).abs() < 1e-15);
    let l = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.value(l).data(), &[0.0, -0.2]);
    let sg = tape.sigmoid(x);
    assert_eq!(tape.value(sg).data()[0], 0.5);
    let th = tape.tanh(x);
    assert!((tape.value(th).data()[1] + 0.761_594_155_955_764_9).abs() < 1e-15);
}

#[test]
fn segment_softmax_examples() {
    let mut tape = Tape::new();
    let one = tape.constant(Tensor::vector(vec![3.7]));
    let y = tape.segment_softmax(one, Arc::from(vec![0])).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0]);

    let eq = tape.constant(Tensor::vector(vec![0.3, 0.3]));
    let y = tape.segment_softmax(eq, Arc::from(vec![0, 0])).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let s = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let y = tape.segment_softmax(s, Arc::from(vec![0, 0, 0])).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| (v - 3.0).exp()).sum();
    for (i, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
        assert!((tape.value(y).data()[i] - (v - 3.0).exp() / z).abs() < 1e-12);
    }

    let empty = tape.constant(Tensor::new(vec![0], vec![]).unwrap());
    let y = tape.segment_softmax(empty, Arc::from(Vec::<usize>::new())).unwrap();
    assert!(tape.value(y).is_empty());
}

#[test]
fn backward_of_linear_map_is_input() {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap()).unwrap();
    let unused = store.insert("unused", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let mut tape = Tape::new();
    // loss = sum(x W) with x = [[1.5, -2]] fixed: dL/dW[i, j] = x[i]
    let x = tape.constant(Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap());
    let vw = tape.param(&store, w);
    let _ = tape.param(&store, unused);
    let y = tape.matmul(x, vw).unwrap();
    let loss = tape.sum(y);
    let grads = tape.backward(loss).unwrap();
    store.accumulate(&grads);
    assert_eq!(store.get(w).grad.data(), &[1.5, 1.5, 1.5, -2.0, -2.0, -2.0]);
    assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
}

/// Builds `sum(op(inputs) * r)` with a fixed random weighting `r`, so every
/// output element receives a distinct upstream gradient.
fn weighted<F>(seed: u64, shapes: &[&[usize]], op: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    for instance in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 100 + instance);
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.insert(format!("in{i}"), rand_tensor(&mut rng, s)).unwrap())
            .collect();
        let out_seed = rng.random::<u64>();
        let loss_fn = |store: &ParamStore, tape: &mut Tape| -> Result<Var, TensorError> {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let y = op(tape, &vars);
            let mut r = ChaCha8Rng::seed_from_u64(out_seed);
            let shape = tape.shape(y).to_vec();
            let wv = tape.constant(rand_tensor(&mut r, &shape));
            let p = tape.mul(y, wv)?;
            Ok(tape.sum(p))
        };
        let report =
            check_gradients(&mut store, loss_fn, &GradCheckConfig::default(), &mut rng).unwrap();
        assert!(report.passed(), "seed {seed} instance {instance}: {report:?}");
    }
}

#[test]
fn gradients_elementwise_and_linear() {
    weighted(1, &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap());
    weighted(2, &[&[3, 4], &[4]], |t, v| t.add_bias(v[0], v[1]).unwrap());
    weighted(3, &[&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1]).unwrap());
    weighted(4, &[&[2, 3], &[2, 3]], |t, v| t.sub(v[0], v[1]).unwrap());
    weighted(5, &[&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1]).unwrap());
    weighted(6, &[&[5]], |t, v| t.scale(v[0], -1.7));
    weighted(7, &[&[2, 5]], |t, v| t.silu(v[0]));
    weighted(8, &[&[2, 5]], |t, v| t.sigmoid(v[0]));
    weighted(9, &[&[2, 5]], |t, v| t.tanh(v[0]));
    weighted(10, &[&[2, 5]], |t, v| t.leaky_relu(v[0], 0.2));
    weighted(11, &[&[2, 5]], |t, v| t.abs(v[0]));
    weighted(12, &[&[2, 5]], |t, v| t.sum(v[0]));
    weighted(13, &[&[2, 5]], |t, v| t.mean(v[0]));
    weighted(14, &[&[2, 6]], |t, v| t.reshape(v[0], &[3, 4]).unwrap());
}

#[test]
fn gradients_structural() {
    weighted(20, &[&[3, 2], &[3, 4]], |t, v| t.concat_cols(v[0], v[1]).unwrap());
    weighted(21, &[&[4, 3]], |t, v| {
        t.gather_rows(v[0], Arc::from(vec![2, 0, 2, 3, 1])).unwrap()
    });
    weighted(22, &[&[5, 3]], |t, v| {
        t.scatter_add_rows(v[0], Arc::from(vec![1, 1, 0, 3, 1]), 4).unwrap()
    });
    weighted(23, &[&[4, 3], &[4]], |t, v| t.scale_rows(v[0], v[1]).unwrap());
    weighted(24, &[&[6]], |t, v| {
        t.segment_softmax(v[0], Arc::from(vec![0, 1, 0, 2, 1, 0])).unwrap()
    });
}

#[test]
fn gradients_conv_and_norm() {
    weighted(30, &[&[2, 10], &[3, 2, 3], &[3]], |t, v| {
        t.conv1d(v[0], v[1], v[2], 0).unwrap()
    });
    weighted(31, &[&[2, 3, 8], &[4, 3, 5], &[4]], |t, v| {
        t.conv1d(v[0], v[1], v[2], 2).unwrap()
    });
    weighted(32, &[&[3, 2, 5], &[2], &[2]], |t, v| {
        t.batch_norm(v[0], v[1], v[2], &NormStats::Batch { eps: 1e-5 })
            .unwrap()
            .0
    });
    weighted(33, &[&[3, 2, 5], &[2], &[2]], |t, v| {
        let stats = NormStats::Fixed {
            mean: vec![0.1, -0.2],
            var: vec![0.5, 1.5],
            eps: 1e-5,
        };
        t.batch_norm(v[0], v[1], v[2], &stats).unwrap().0
    });
}

#[test]
fn batch_norm_train_normalizes_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut tape = Tape::new();
    let x = tape.constant(rand_tensor(&mut rng, &[4, 3, 6]));
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let (y, stats) = tape.batch_norm(x, g, b, &NormStats::Batch { eps: 0.0 }).unwrap();
    assert!(stats.is_some());
    let yv = tape.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|bi| yv.data()[(bi * 3 + c) * 6..][..6].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / 24.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 24.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut tape = Tape::new();
        let x = tape.constant(rand_tensor(&mut rng, &[7, 13]));
        let w = tape.constant(rand_tensor(&mut rng, &[13, 11]));
        let y = tape.matmul(x, w).unwrap();
        let y = tape.silu(y);
        tape.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

proptest! {
    #[test]
    fn segment_softmax_is_a_simplex_per_segment(
        entries in proptest::collection::vec((-30.0f64..30.0, 0usize..5), 1..40)
    ) {
        let (scores, segs): (Vec<f64>, Vec<usize>) = entries.into_iter().unzip();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::vector(scores));
        let y = tape.segment_softmax(s, Arc::from(segs.clone())).unwrap();
        let mut sums = [0.0f64; 5];
        for (&g, &v) in segs.iter().zip(tape.value(y).data()) {
            prop_assert!(v > 0.0 && v <= 1.0);
            sums[g] += v;
        }
        for g in 0..5 {
            if segs.contains(&g) {
                prop_assert!((sums[g] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matmul_agrees_with_naive(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, k]);
        let b = rand_tensor(&mut rng, &[k, n]);
        let want = naive_matmul(&a, &b);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let y = tape.matmul(va, vb).unwrap();
        prop_assert!(tape.value(y).max_abs_diff(&want) < 1e-12);
    }
}
