use cmrt::diffcore::{GradCheck, Graph, Op, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn leaves(items: Vec<(&str, Tensor)>) -> Vec<(String, Tensor)> {
    items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

/// Reduces an op output to a scalar through fixed random weights so every
/// output coordinate contributes with a distinct sensitivity.
fn probe(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var, TensorError> {
    let w = g.constant(weights.clone())?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check(name: &str, seed: u64, ls: Vec<(String, Tensor)>, out_shape: (usize, usize), f: impl Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = rand_tensor(&mut rng, out_shape.0, out_shape.1);
    let report = GradCheck::new(1e-5, 1e-4)
        .run(&ls, |g: &mut Graph, v: &[Var]| {
            let y = f(g, v)?;
            if g.value(y).numel() == 1 {
                Ok(y)
            } else {
                probe(g, y, &w)
            }
        })
        .unwrap();
    assert!(report.passed(), "{name} seed {seed}: {:?}", report.leaves);
}

#[test]
fn every_op_matches_finite_differences_on_50_instances() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..5);
        let k = rng.random_range(1..5);
        let n = rng.random_range(2..5);
        let a = rand_tensor(&mut rng, m, k);
        let b = rand_tensor(&mut rng, k, n);
        let bt = rand_tensor(&mut rng, n, k);
        let x = rand_tensor(&mut rng, m, n);
        let y = rand_tensor(&mut rng, m, n);
        let row = rand_tensor(&mut rng, 1, n);

        check("matmul", seed, leaves(vec![("a", a.clone()), ("b", b)]), (m, n), |g, v| g.matmul(v[0], v[1]));
        check("matmul_nt", seed, leaves(vec![("a", a.clone()), ("b", bt.clone())]), (m, n), |g, v| g.matmul_nt(v[0], v[1]));
        check("add", seed, leaves(vec![("x", x.clone()), ("y", y.clone())]), (m, n), |g, v| g.add(v[0], v[1]));
        check("sub", seed, leaves(vec![("x", x.clone()), ("y", y.clone())]), (m, n), |g, v| g.sub(v[0], v[1]));
        check("mul", seed, leaves(vec![("x", x.clone()), ("y", y.clone())]), (m, n), |g, v| g.mul(v[0], v[1]));
        check("add_row", seed, leaves(vec![("x", x.clone()), ("r", row.clone())]), (m, n), |g, v| g.add_row(v[0], v[1]));
        check("scale", seed, leaves(vec![("x", x.clone())]), (m, n), |g, v| g.scale(v[0], -1.7));
        check("concat0", seed, leaves(vec![("x", x.clone()), ("y", y.clone())]), (2 * m, n), |g, v| g.concat(&[v[0], v[1]], 0));
        check("concat1", seed, leaves(vec![("x", x.clone()), ("y", y.clone())]), (m, 2 * n), |g, v| g.concat(&[v[0], v[1]], 1));
        check("slice0", seed, leaves(vec![("x", x.clone())]), (1, n), |g, v| g.slice(v[0], 0, m - 1, m));
        check("slice1", seed, leaves(vec![("x", x.clone())]), (m, n - 1), |g, v| g.slice(v[0], 1, 1, n));
        check("mean0", seed, leaves(vec![("x", x.clone())]), (1, n), |g, v| g.mean_pool(v[0], 0));
        check("mean1", seed, leaves(vec![("x", x.clone())]), (m, 1), |g, v| g.mean_pool(v[0], 1));
        check("sum", seed, leaves(vec![("x", x.clone())]), (1, 1), |g, v| g.sum(v[0]));
        check("softmax", seed, leaves(vec![("x", x.clone())]), (m, n), |g, v| g.softmax(v[0]));
        let sq = rand_tensor(&mut rng, n, n);
        check("causal_softmax", seed, leaves(vec![("x", sq)]), (n, n), |g, v| g.causal_softmax(v[0]));
        check("log_softmax", seed, leaves(vec![("x", x.clone())]), (m, n), |g, v| g.log_softmax(v[0]));
        check("cosine", seed, leaves(vec![("a", a.clone()), ("b", bt.clone())]), (m, n), |g, v| g.cosine(v[0], v[1]));
        let gamma = rand_tensor(&mut rng, 1, n);
        check("layer_norm", seed, leaves(vec![("x", x.clone()), ("gamma", gamma), ("beta", row.clone())]), (m, n), |g, v| {
            g.layer_norm(v[0], v[1], v[2])
        });
        check("gelu", seed, leaves(vec![("x", x.clone())]), (m, n), |g, v| g.gelu(v[0]));
        let idx: Vec<Option<usize>> = (0..4).map(|i| if i == 2 { None } else { Some(rng.random_range(0..m)) }).collect();
        check("gather", seed, leaves(vec![("table", x.clone())]), (4, n), move |g, v| g.gather(v[0], idx.clone()));
        let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        check("cross_entropy", seed, leaves(vec![("logits", x.clone())]), (1, 1), move |g, v| g.cross_entropy(v[0], targets.clone()));
        check("kl", seed, leaves(vec![("p", x.clone()), ("q", y.clone())]), (1, 1), |g, v| {
            let lp = g.log_softmax(v[0])?;
            let lq = g.log_softmax(v[1])?;
            g.kl(lp, lq)
        });
    }
}

#[test]
fn random_three_layer_graph_passes_gradient_check() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let ls = leaves(vec![
            ("x", rand_tensor(&mut rng, 3, 4)),
            ("w1", rand_tensor(&mut rng, 4, 6)),
            ("b1", rand_tensor(&mut rng, 1, 6)),
            ("w2", rand_tensor(&mut rng, 6, 5)),
            ("w3", rand_tensor(&mut rng, 5, 3)),
        ]);
        let report = GradCheck::new(1e-5, 1e-4)
            .run(&ls, |g: &mut Graph, v: &[Var]| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.add_row(h, v[2])?;
                let h = g.gelu(h)?;
                let h = g.matmul(h, v[3])?;
                let h = g.softmax(h)?;
                let h = g.matmul(h, v[4])?;
                g.cross_entropy(h, vec![0, 2, 1])
            })
            .unwrap();
        assert!(report.passed(), "{:?}", report.leaves);
        assert!(report.max_rel_error() <= 1e-4);
    }
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
    let y = g.softmax(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn mean_pool_rows() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap()).unwrap();
    let y = g.mean_pool(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 4.0]);
}

#[test]
fn cosine_of_orthogonal_vectors_is_zero() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
    let b = g.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
    let c = g.cosine(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[0.0]);
}

#[test]
fn gradient_of_sum_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]).unwrap()).unwrap();
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn self_cosine_is_stationary() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
    let c = g.cosine(x, x).unwrap();
    assert!((g.value(c).item() - 1.0).abs() < 1e-15);
    g.backward(c).unwrap();
    for &v in g.grad(x).unwrap() {
        assert!(v.abs() < 1e-15, "{v}");
    }
}

#[test]
fn backward_accumulates_across_calls() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let y = g.scale(x, 3.0).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0, 6.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss { .. })));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    assert!(err.to_string().contains("[2, 3]"), "{err}");
}

#[test]
fn non_finite_values_are_hard_errors() {
    let mut g = Graph::<f64>::new();
    assert!(matches!(g.constant(Tensor::vector(vec![f64::NAN])), Err(TensorError::NonFinite { .. })));
    let x = g.constant(Tensor::vector(vec![1e300])).unwrap();
    assert!(matches!(g.scale(x, 1e300), Err(TensorError::NonFinite { op: "scale" })));
}

#[test]
fn zero_vector_cosine_is_an_error() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
    let b = g.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
    assert!(matches!(g.cosine(a, b), Err(TensorError::ZeroVector { .. })));
}

#[test]
fn inputs_precede_consumers() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let b = g.scale(a, 2.0).unwrap();
    let c = g.add(a, b).unwrap();
    let d = g.sum(c).unwrap();
    for v in [b, c, d] {
        assert!(g.inputs(v).iter().all(|i| i.id() < v.id()));
    }
    assert_eq!(g.op(c), &Op::Add);
}

#[test]
fn kl_of_identical_distributions_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, 3, 5);
    let ls = leaves(vec![("p", x.clone()), ("q", x)]);
    let check = GradCheck::new(1e-5, 1e-4);
    let build = |g: &mut Graph, v: &[Var]| -> Result<Var, TensorError> {
        let lp = g.log_softmax(v[0])?;
        let lq = g.log_softmax(v[1])?;
        g.kl(lp, lq)
    };
    let analytic = check.analytic(&ls, &build).unwrap();
    for grad in &analytic {
        assert!(grad.iter().all(|v| v.abs() < 1e-12));
    }
    assert!(check.run(&ls, build).unwrap().passed());
}

#[test]
fn corrupted_gradient_fails_with_named_leaf() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ls = leaves(vec![("weights", rand_tensor(&mut rng, 3, 3)), ("inputs", rand_tensor(&mut rng, 2, 3))]);
    let build = |g: &mut Graph, v: &[Var]| -> Result<Var, TensorError> {
        let h = g.matmul_nt(v[1], v[0])?;
        g.cross_entropy(h, vec![1, 2])
    };
    let check = GradCheck::new(1e-5, 1e-4);
    let mut analytic = check.analytic(&ls, &build).unwrap();
    let numeric = check.numeric(&ls, &build).unwrap();
    analytic[0][4] += 0.05;
    let names: Vec<String> = ls.iter().map(|(n, _)| n.clone()).collect();
    let report = check.compare(&names, &analytic, &numeric);
    assert!(!report.passed());
    assert_eq!(report.failing(), vec!["weights"]);
}

#[test]
fn mean_pool_backward_distributes_exact_share() {
    for n in 1..9usize {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[n, 3])).unwrap();
        let p = g.mean_pool(x, 0).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        let share = 1.0 / n as f64;
        assert!(g.grad(x).unwrap().iter().all(|&v| v == share));
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..8, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-30.0..30.0)).collect()).unwrap();
        let mut g = Graph::<f64>::new();
        let v = g.constant(x).unwrap();
        let s = g.softmax(v).unwrap();
        let ls = g.log_softmax(v).unwrap();
        for r in 0..rows {
            let row = g.value(s).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (p, lp) in row.iter().zip(g.value(ls).row(r)) {
                if *p > 0.0 {
                    prop_assert!((p.ln() - lp).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn concat_then_slice_is_exact(m1 in 1usize..5, m2 in 1usize..5, n in 1usize..5, axis in 0usize..2, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s1, s2) = if axis == 0 { ((m1, n), (m2, n)) } else { ((n, m1), (n, m2)) };
        let a = rand_tensor(&mut rng, s1.0, s1.1);
        let b = rand_tensor(&mut rng, s2.0, s2.1);
        let mut g = Graph::<f64>::new();
        let va = g.constant(a.clone()).unwrap();
        let vb = g.constant(b.clone()).unwrap();
        let c = g.concat(&[va, vb], axis).unwrap();
        let back_a = g.slice(c, axis, 0, m1).unwrap();
        let back_b = g.slice(c, axis, m1, m1 + m2).unwrap();
        prop_assert_eq!(g.value(back_a), &a);
        prop_assert_eq!(g.value(back_b), &b);
    }
}

#[test]
fn gradcheck_floor_tracks_difference_resolution() {
    let gc = GradCheck::new(1e-5, 1e-4);
    // One ulp of a loss near 20, seen through a step of 1e-5.
    let noise = 3.552_713_678_800_501e-15 / 2e-5;
    assert!(noise / gc.floor > gc.tol);
    assert!(noise / gc.resolution::<f64>(20.0) < gc.tol / 4.0);
    assert_eq!(gc.resolution::<f64>(0.5), gc.resolution::<f64>(1.0));
    assert!(gc.resolution::<f32>(1.0) > gc.resolution::<f64>(1.0));
}
