use proptest::prelude::*;

use dln_core::init::{init_weights, DimensionPlan, InitScheme};
use dln_core::linalg::{kron, matmul, singular_values, sym_eigvals, unvec, vec, Matrix};
use dln_core::network::NetworkState;
use dln_core::rng::GaussianStream;
use dln_core::trainer::{gd_step, train_run};
use dln_core::{gen_synthetic, Dataset, SchemeKind, TrainConfig};

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

fn scheme(orth: bool) -> InitScheme {
    InitScheme::of_kind(if orth { SchemeKind::Orthogonal } else { SchemeKind::Gaussian })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vec_of_product_is_kronecker(r in 1usize..5, k in 1usize..5, c in 1usize..5, q in 1usize..5, seed in any::<u64>()) {
        let mut s = GaussianStream::new(seed);
        let a = s.matrix(r, k, 1.0);
        let x = s.matrix(k, c, 1.0);
        let b = s.matrix(c, q, 1.0);
        let lhs = vec(&matmul(&matmul(&a, &x).unwrap(), &b).unwrap());
        let rhs = matmul(&kron(&b.transpose(), &a).unwrap(), &vec(&x)).unwrap();
        prop_assert!(rel(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn vec_unvec_roundtrip(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
        let a = GaussianStream::new(seed).matrix(r, c, 3.0);
        prop_assert_eq!(unvec(&vec(&a), r, c).unwrap(), a);
    }

    #[test]
    fn text_roundtrip_is_exact(r in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let a = GaussianStream::new(seed).matrix(r, c, 1e3);
        prop_assert_eq!(Matrix::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn gram_eigenvalues_are_squared_singular_values(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
        let a = GaussianStream::new(seed).matrix(r, c, 1.0);
        let sv = singular_values(&a);
        let eig = sym_eigvals(&matmul(&a.transpose(), &a).unwrap()).unwrap();
        for (k, s) in sv.iter().enumerate() {
            prop_assert!((s * s - eig[k]).abs() <= 1e-10 * eig[0].max(1.0));
        }
    }

    #[test]
    fn partial_products_associate(depth in 2usize..7, width in 4usize..7, orth in any::<bool>(), seed in any::<u64>(), cut in 0usize..100) {
        let plan = DimensionPlan::uniform(3, 2, width, depth).unwrap();
        let net = init_weights(&plan, &scheme(orth), seed).unwrap();
        let k = 1 + cut % (depth - 1);
        let whole = net.partial_product(1, depth).unwrap();
        let split = matmul(&net.partial_product(k + 1, depth).unwrap(), &net.partial_product(1, k).unwrap()).unwrap();
        prop_assert!(rel(&split, &whole) < 1e-12);
    }

    #[test]
    fn output_is_linear_in_inputs(depth in 1usize..6, orth in any::<bool>(), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let plan = DimensionPlan::uniform(4, 3, 5, depth).unwrap();
        let net = init_weights(&plan, &scheme(orth), seed).unwrap();
        let mut s = GaussianStream::new(seed ^ 1);
        let (x1, x2) = (s.matrix(4, 3, 1.0), s.matrix(4, 3, 1.0));
        let mixed = net.forward_output(&x1.scale(a).add(&x2.scale(b)).unwrap()).unwrap();
        let parts = net.forward_output(&x1).unwrap().scale(a).add(&net.forward_output(&x2).unwrap().scale(b)).unwrap();
        prop_assert!(mixed.sub(&parts).unwrap().max_abs() <= 1e-10 * (1.0 + parts.max_abs()));
    }

    #[test]
    fn output_matches_dense_product(depth in 1usize..6, orth in any::<bool>(), seed in any::<u64>()) {
        let plan = DimensionPlan::uniform(3, 2, 4, depth).unwrap();
        let net = init_weights(&plan, &scheme(orth), seed).unwrap();
        let x = GaussianStream::new(seed ^ 7).matrix(3, 5, 1.0);
        let mut dense = x.clone();
        for w in net.weights() {
            dense = matmul(w, &dense).unwrap();
        }
        prop_assert!(rel(&net.forward_output(&x).unwrap(), &dense.scale(net.alpha())) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradients_match_central_differences(depth in 1usize..5, dx in 1usize..5, dy in 1usize..5, n in 1usize..5, extra in 0usize..3, orth in any::<bool>(), seed in any::<u64>()) {
        let width = dx.max(dy) + extra;
        let mut s = GaussianStream::new(seed);
        let ds = Dataset::new(s.matrix(dx, n, 1.0), s.matrix(dy, n, 1.0), None).unwrap();
        let plan = DimensionPlan::uniform(dx, dy, width, depth).unwrap();
        let net = init_weights(&plan, &scheme(orth), seed ^ 3).unwrap();
        let grads = net.gradients(&ds).unwrap();
        for (k, g) in grads.iter().enumerate() {
            let i = k + 1;
            let w = net.layer(i);
            let fd = Matrix::from_fn(w.rows(), w.cols(), |r, c| {
                let v = w.get(r, c);
                let h = 1e-5 * (1.0 + v.abs());
                let at = |x: f64| {
                    let mut m = w.clone();
                    m.as_dmatrix_mut()[(r, c)] = x;
                    net.with_layer(i, m).unwrap().loss(&ds).unwrap()
                };
                (at(v + h) - at(v - h)) / (2.0 * h)
            });
            let gap = g.sub(&fd).unwrap().frobenius_norm() / g.frobenius_norm().max(1e-12);
            prop_assert!(gap < 1e-6, "layer {} gap {}", i, gap);
        }
    }

    #[test]
    fn fused_step_matches_explicit_gradients(depth in 1usize..6, orth in any::<bool>(), seed in any::<u64>(), scale in 0.01f64..1.0) {
        let ds = gen_synthetic(3, 2, 4, seed).unwrap();
        let plan = DimensionPlan::uniform(3, 2, 4, depth).unwrap();
        let net = init_weights(&plan, &scheme(orth), seed ^ 5).unwrap();
        let eta = scale * dln_core::theorem_lr(&ds, depth, 2);
        let fast = gd_step(&net, &ds, eta).unwrap();
        let grads = net.gradients(&ds).unwrap();
        for (k, g) in grads.iter().enumerate() {
            let expect = net.layer(k + 1).sub(&g.scale(eta)).unwrap();
            prop_assert!(rel(fast.layer(k + 1), &expect) < 1e-12);
        }
    }
}

#[test]
fn same_seed_same_run() {
    let ds = gen_synthetic(6, 2, 5, 11).unwrap();
    for orth in [true, false] {
        let plan = DimensionPlan::uniform(6, 2, 8, 5).unwrap();
        let cfg = TrainConfig::new(plan, scheme(orth), 50, 99);
        let a = train_run(&cfg, &ds).unwrap();
        let b = train_run(&cfg, &ds).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.meta_json(), b.meta_json());
    }
}

#[test]
fn orthogonal_runs_contract_in_the_theorem_regime() {
    let ds = gen_synthetic(8, 2, 8, 4).unwrap();
    let plan = DimensionPlan::uniform(8, 2, 64, 6).unwrap();
    let cfg = TrainConfig::new(plan, InitScheme::orthogonal(), 300, 1);
    let rec = train_run(&cfg, &ds).unwrap();
    assert!(rec.rows.windows(2).all(|w| w[1].loss <= w[0].loss));
    assert!(rec.final_row().rel_loss < 1e-3, "{}", rec.final_row().rel_loss);
}

#[test]
fn files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_synthetic(5, 3, 4, 2).unwrap();
    ds.save(&dir.path().join("data")).unwrap();
    assert_eq!(Dataset::load(&dir.path().join("data")).unwrap(), ds);

    let plan = DimensionPlan::uniform(5, 3, 6, 4).unwrap();
    let net = init_weights(&plan, &InitScheme::gaussian(), 8).unwrap();
    net.save_checkpoint(&dir.path().join("ck"), Some(8), 12).unwrap();
    let back = NetworkState::load_checkpoint(&dir.path().join("ck")).unwrap();
    assert_eq!(back.step, 12);
    assert_eq!(back.seed, Some(8));
    assert_eq!(back.net.weights(), net.weights());
    assert_eq!(back.net.alpha(), net.alpha());
}
