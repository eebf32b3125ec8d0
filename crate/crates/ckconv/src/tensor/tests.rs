use super::*;
use crate::error::Error;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Independent triple-loop matmul oracle.
fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol,
            "element {i}: got {g}, want {w} (tol {tol})"
        );
    }
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let eye = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let c = g.matmul(eye, a).unwrap();
    assert_eq!(g.data(c), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_hand_case() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[1, 1]);
    assert_eq!(g.data(c), &[11.0]);
}

#[test]
fn matmul_matches_naive_oracle() {
    let mut r = rng(11);
    let a = random_tensor(&mut r, vec![5, 7]);
    let b = random_tensor(&mut r, vec![7, 3]);
    let want = naive_matmul(&a, &b);
    let mut g = Graph::new();
    let (ai, bi) = (g.constant(a), g.constant(b));
    let c = g.matmul(ai, bi).unwrap();
    assert_close(g.data(c), want.data(), 1e-12);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn relu_and_mul_hand_cases() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = g.relu(x).unwrap();
    assert_eq!(g.data(y), &[0.0, 0.0, 2.0]);

    let a = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let b = g.constant(Tensor::new(vec![3], vec![4.0, 5.0, 6.0]).unwrap());
    let p = g.mul(a, b).unwrap();
    assert_eq!(g.data(p), &[4.0, 10.0, 18.0]);
}

#[test]
fn broadcast_mul_matches_explicit_replication() {
    let mut r = rng(12);
    let a = random_tensor(&mut r, vec![4, 4, 4, 1]);
    let b = random_tensor(&mut r, vec![4, 4, 4, 8]);
    // Oracle: replicate a's channel axis by hand, then multiply elementwise.
    let mut replicated = vec![0.0; 4 * 4 * 4 * 8];
    for i in 0..64 {
        for c in 0..8 {
            replicated[i * 8 + c] = a.data()[i] * b.data()[i * 8 + c];
        }
    }
    let mut g = Graph::new();
    let (ai, bi) = (g.constant(a), g.constant(b));
    let p = g.mul(ai, bi).unwrap();
    assert_eq!(g.shape(p), &[4, 4, 4, 8]);
    assert_close(g.data(p), &replicated, 0.0);
}

#[test]
fn broadcast_rejects_incompatible_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 2]));
    assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
    // No implicit rank promotion.
    let c = g.constant(Tensor::zeros(vec![3]));
    assert!(matches!(g.add(a, c), Err(Error::Dimension(_))));
}

#[test]
fn reduce_sum_axis0() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let s = g.reduce_sum(a, 0).unwrap();
    assert_eq!(g.shape(s), &[2]);
    assert_eq!(g.data(s), &[4.0, 6.0]);
}

#[test]
fn reduce_max_records_argmax() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 5.0, 3.0, 4.0]).unwrap());
    let m = g.reduce_max(a, 1).unwrap();
    assert_eq!(g.data(m), &[5.0, 4.0]);
    // Max of row [1,5] sits at position 1, max of row [3,4] at position 1.
    let flat = g.node_argmax(m).unwrap();
    let positions: Vec<usize> = flat.iter().map(|&f| f % 2).collect();
    assert_eq!(positions, vec![1, 1]);
}

#[test]
fn reduce_axis_out_of_range_is_domain_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 2]));
    assert!(matches!(g.reduce_sum(a, 2), Err(Error::Domain(_))));
}

#[test]
fn max_gradient_routes_to_argmax() {
    // Kink-free input: entries well separated, checked against central
    // finite differences.
    let x0 = vec![0.3, -0.8, 0.95, 0.1, -0.2, 0.55];
    let eval = |data: &[f64]| -> crate::error::Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 3], data.to_vec()).unwrap(), true);
        let t = g.tanh(x)?;
        let m = g.reduce_max(t, 1)?;
        let loss = g.sum_all(m)?;
        Ok(g.data(loss)[0])
    };
    let fd = finite_difference_grad(eval, &x0, 1e-3).unwrap();

    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2, 3], x0.clone()).unwrap(), true);
    let t = g.tanh(x).unwrap();
    let m = g.reduce_max(t, 1).unwrap();
    let loss = g.sum_all(m).unwrap();
    g.backward(loss).unwrap();
    let ad = g.grad(x).unwrap();
    assert_close(ad, &fd, 1e-6);
    // Gradient is exactly zero off the argmax positions.
    assert_eq!(ad[0], 0.0);
    assert_eq!(ad[3], 0.0);
}

#[test]
fn reshape_preserves_row_major_order_and_roundtrips() {
    let data: Vec<f64> = (0..64).map(|i| i as f64).collect();
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![64], data.clone()).unwrap());
    let cube = g.reshape(a, vec![4, 4, 4]).unwrap();
    assert_eq!(g.data(cube), data.as_slice());
    let back = g.reshape(cube, vec![64]).unwrap();
    assert_eq!(g.data(back), data.as_slice());

    let bad = g.reshape(cube, vec![4, 4, 5]);
    assert!(matches!(bad, Err(Error::Dimension(_))));
}

#[test]
fn gradient_through_reshape_matches_gradient_without_it() {
    let x0: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.5).collect();
    let run = |with_reshape: bool| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![12], x0.clone()).unwrap(), true);
        let y = if with_reshape {
            let r = g.reshape(x, vec![3, 4]).unwrap();
            g.tanh(r).unwrap()
        } else {
            g.tanh(x).unwrap()
        };
        let loss = g.sum_all(y).unwrap();
        g.backward(loss).unwrap();
        g.grad(x).unwrap().to_vec()
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn backward_quadratic_analytic() {
    let mut g = Graph::new();
    let w = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
    let sq = g.mul(w, w).unwrap();
    let loss = g.sum_all(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_constant_loss_gives_zero_grad() {
    let mut g = Graph::new();
    let w = g.leaf(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap(), true);
    let c = g.constant(Tensor::scalar(5.0));
    let loss = g.sum_all(c).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let w = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
    let y = g.mul(w, w).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
}

#[test]
fn fan_out_gradients_accumulate() {
    // loss = sum(w*w) + sum(w) -> grad = 2w + 1
    let mut g = Graph::new();
    let w = g.leaf(Tensor::new(vec![2], vec![3.0, -2.0]).unwrap(), true);
    let sq = g.mul(w, w).unwrap();
    let a = g.sum_all(sq).unwrap();
    let b = g.sum_all(w).unwrap();
    let loss = g.add(a, b).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[7.0, -3.0]);
}

/// Builds a 3-layer tanh MLP loss as a pure function of a flat parameter
/// vector, so the same closure serves the graph and the FD oracle.
fn mlp_loss(params: &[f64], x: &Tensor, collect_grads: bool) -> (f64, Vec<f64>) {
    let sizes = [(4usize, 8usize), (8, 8), (8, 3)];
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let mut offset = 0;
    let mut ids = Vec::new();
    let mut h = xi;
    for &(fan_in, fan_out) in &sizes {
        let w_len = fan_in * fan_out;
        let w = g.leaf(
            Tensor::new(vec![fan_in, fan_out], params[offset..offset + w_len].to_vec()).unwrap(),
            true,
        );
        offset += w_len;
        let b = g.leaf(
            Tensor::new(vec![1, fan_out], params[offset..offset + fan_out].to_vec()).unwrap(),
            true,
        );
        offset += fan_out;
        ids.push((w, w_len));
        ids.push((b, fan_out));
        let mm = g.matmul(h, w).unwrap();
        let lin = g.add(mm, b).unwrap();
        h = g.tanh(lin).unwrap();
    }
    assert_eq!(offset, params.len());
    let sq = g.mul(h, h).unwrap();
    let loss = g.sum_all(sq).unwrap();
    let value = g.data(loss)[0];
    if !collect_grads {
        return (value, Vec::new());
    }
    g.backward(loss).unwrap();
    let mut grads = Vec::with_capacity(params.len());
    for (id, _) in ids {
        grads.extend_from_slice(g.grad(id).unwrap());
    }
    (value, grads)
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut r = rng(21);
    let n_params = 4 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3;
    let params: Vec<f64> = (0..n_params).map(|_| r.random_range(-0.7..0.7)).collect();
    let x = random_tensor(&mut r, vec![2, 4]);

    let (_, analytic) = mlp_loss(&params, &x, true);
    let fd = finite_difference_grad(|p| Ok(mlp_loss(p, &x, false).0), &params, 1e-3).unwrap();

    let mut worst = 0.0f64;
    for (&a, &f) in analytic.iter().zip(&fd) {
        let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-2);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn finite_difference_basic_cases() {
    // f = x^2 at 3
    let fd = finite_difference_grad(|x| Ok(x[0] * x[0]), &[3.0], 1e-4).unwrap();
    assert!((fd[0] - 6.0).abs() < 1e-6);

    // constant
    let fd = finite_difference_grad(|_| Ok(7.5), &[1.0, 2.0], 1e-4).unwrap();
    assert_eq!(fd, vec![0.0, 0.0]);

    // f = sum(tanh(x)) -> 1 - tanh^2
    let mut r = rng(3);
    let x: Vec<f64> = (0..6).map(|_| r.random_range(-1.5..1.5)).collect();
    let fd = finite_difference_grad(|p| Ok(p.iter().map(|v| v.tanh()).sum()), &x, 1e-4).unwrap();
    for (&xi, &fdi) in x.iter().zip(&fd) {
        let want = 1.0 - xi.tanh() * xi.tanh();
        assert!((fdi - want).abs() < 1e-7, "got {fdi}, want {want}");
    }
}

#[test]
fn bmm_matches_per_batch_naive() {
    let mut r = rng(31);
    let a = random_tensor(&mut r, vec![3, 4, 5]);
    let b = random_tensor(&mut r, vec![3, 5, 2]);
    let mut g = Graph::new();
    let (ai, bi) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.bmm(ai, bi).unwrap();
    for batch in 0..3 {
        let ab = Tensor::new(vec![4, 5], a.data()[batch * 20..(batch + 1) * 20].to_vec()).unwrap();
        let bb = Tensor::new(vec![5, 2], b.data()[batch * 10..(batch + 1) * 10].to_vec()).unwrap();
        let want = naive_matmul(&ab, &bb);
        assert_close(&g.data(c)[batch * 8..(batch + 1) * 8], want.data(), 1e-12);
    }
}

#[test]
fn bmm_ta_matches_transposed_naive() {
    let mut r = rng(32);
    let a = random_tensor(&mut r, vec![2, 5, 3]); // [B, k, m]
    let b = random_tensor(&mut r, vec![2, 5, 4]); // [B, k, n]
    let mut g = Graph::new();
    let (ai, bi) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.bmm_ta(ai, bi).unwrap();
    assert_eq!(g.shape(c), &[2, 3, 4]);
    for batch in 0..2 {
        for i in 0..3 {
            for j in 0..4 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.data()[batch * 15 + p * 3 + i] * b.data()[batch * 20 + p * 4 + j];
                }
                let got = g.data(c)[batch * 12 + i * 4 + j];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn per_op_gradients_match_finite_differences() {
    // One representative parameterized use of each differentiable op.
    type Builder = fn(&mut Graph, TensorId) -> TensorId;
    let cases: Vec<(&str, Vec<usize>, Builder)> = vec![
        ("matmul", vec![3, 4], |g, x| {
            let mut r = rng(101);
            let w = random_tensor(&mut r, vec![4, 2]);
            let wi = g.constant(w);
            g.matmul(x, wi).unwrap()
        }),
        ("bmm", vec![2, 3, 4], |g, x| {
            let mut r = rng(102);
            let w = random_tensor(&mut r, vec![2, 4, 2]);
            let wi = g.constant(w);
            g.bmm(x, wi).unwrap()
        }),
        ("bmm_ta", vec![2, 4, 3], |g, x| {
            let mut r = rng(103);
            let w = random_tensor(&mut r, vec![2, 4, 2]);
            let wi = g.constant(w);
            g.bmm_ta(x, wi).unwrap()
        }),
        ("add_bcast", vec![1, 4], |g, x| {
            let mut r = rng(104);
            let other = random_tensor(&mut r, vec![3, 4]);
            let oi = g.constant(other);
            g.add(x, oi).unwrap()
        }),
        ("sub", vec![3, 4], |g, x| {
            let mut r = rng(105);
            let other = random_tensor(&mut r, vec![3, 4]);
            let oi = g.constant(other);
            g.sub(oi, x).unwrap()
        }),
        ("mul_bcast", vec![3, 4, 1], |g, x| {
            let mut r = rng(106);
            let other = random_tensor(&mut r, vec![3, 4, 2]);
            let oi = g.constant(other);
            g.mul(x, oi).unwrap()
        }),
        ("scale", vec![5], |g, x| g.scale(x, -1.7).unwrap()),
        ("add_scalar", vec![5], |g, x| g.add_scalar(x, 2.5).unwrap()),
        ("tanh", vec![6], |g, x| g.tanh(x).unwrap()),
        ("reduce_sum", vec![3, 4], |g, x| g.reduce_sum(x, 1).unwrap()),
        ("reduce_mean", vec![3, 4], |g, x| g.reduce_mean(x, 0).unwrap()),
        ("reshape", vec![6], |g, x| g.reshape(x, vec![2, 3]).unwrap()),
        ("gather_rows", vec![4, 3], |g, x| {
            g.gather_rows(x, vec![2, 0, 2, 3]).unwrap()
        }),
    ];

    for (name, shape, build) in cases {
        let mut r = rng(7);
        let x0 = random_tensor(&mut r, shape.clone());
        let eval = |data: &[f64]| -> crate::error::Result<f64> {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::new(shape.clone(), data.to_vec()).unwrap(), true);
            let y = build(&mut g, x);
            // tanh keeps the composite loss nonlinear in x.
            let t = g.tanh(y)?;
            g.sum_all(t)
                .map(|loss| g.data(loss)[0])
        };
        let fd = finite_difference_grad(eval, x0.data(), 1e-3).unwrap();

        let mut g = Graph::new();
        let x = g.leaf(x0.clone(), true);
        let y = build(&mut g, x);
        let t = g.tanh(y).unwrap();
        let loss = g.sum_all(t).unwrap();
        g.backward(loss).unwrap();
        let ad = g.grad(x).unwrap();

        for (i, (&a, &f)) in ad.iter().zip(&fd).enumerate() {
            let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-2);
            assert!(rel < 1e-4, "{name}: element {i} rel err {rel} ({a} vs {f})");
        }
    }
}

#[test]
fn forward_replay_is_bit_identical() {
    let run = || {
        let mut r = rng(55);
        let a = random_tensor(&mut r, vec![6, 6]);
        let b = random_tensor(&mut r, vec![6, 6]);
        let mut g = Graph::new();
        let (ai, bi) = (g.constant(a), g.constant(b));
        let mm = g.matmul(ai, bi).unwrap();
        let t = g.tanh(mm).unwrap();
        let m = g.reduce_max(t, 0).unwrap();
        g.data(m).to_vec()
    };
    let x = run();
    let y = run();
    assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn non_finite_forward_is_reported_with_op_name() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![1], vec![1e308]).unwrap());
    let b = g.constant(Tensor::new(vec![1], vec![1e308]).unwrap());
    match g.add(a, b) {
        Err(Error::NonFinite { op, .. }) => assert_eq!(op, "add"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reduce_sum_over_all_axes_matches_arithmetic_sum(
            data in proptest::collection::vec(-1e3f64..1e3, 1..256),
        ) {
            let n = data.len();
            let want: f64 = data.iter().sum();
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![n], data).unwrap());
            let s = g.reduce_sum(x, 0).unwrap();
            let got = g.data(s)[0];
            let tol = 1e-12 * want.abs().max(1.0);
            prop_assert!((got - want).abs() <= tol);
        }

        #[test]
        fn reshape_roundtrip_is_identity(
            data in proptest::collection::vec(-1e6f64..1e6, 24),
        ) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![24], data.clone()).unwrap());
            let a = g.reshape(x, vec![2, 3, 4]).unwrap();
            let b = g.reshape(a, vec![4, 6]).unwrap();
            let c = g.reshape(b, vec![24]).unwrap();
            prop_assert_eq!(g.data(c), data.as_slice());
        }

        #[test]
        fn broadcast_mul_matches_replication(
            a in proptest::collection::vec(-10.0f64..10.0, 12),
            b in proptest::collection::vec(-10.0f64..10.0, 36),
        ) {
            let mut g = Graph::new();
            let ai = g.constant(Tensor::new(vec![3, 4, 1], a.clone()).unwrap());
            let bi = g.constant(Tensor::new(vec![3, 4, 3], b.clone()).unwrap());
            let p = g.mul(ai, bi).unwrap();
            for i in 0..12 {
                for c in 0..3 {
                    prop_assert_eq!(g.data(p)[i * 3 + c], a[i] * b[i * 3 + c]);
                }
            }
        }
    }
}
