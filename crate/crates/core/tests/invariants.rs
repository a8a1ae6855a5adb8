use align_core::combine::{combine, EnsembleMode};
use align_core::embed::{feat_prop_trans, project_columns, GnnKind, GnnParams};
use align_core::eval::{hits_at_k, mutual_inconsistency_ratio, one_to_many_ratio};
use align_core::graph::GroundTruth;
use align_core::gw::{inter_cost, project_simplex, sinkhorn_proximal_step, GwConfig};
use align_core::marginals::Marginals;
use align_core::synth::{random_graph, FeatureKind};
use align_core::AlignmentMatrix;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.01f64..1.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..12, 1usize..12).prop_flat_map(|(r, c)| matrix(r, c))
}

fn perm(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn simplex_projection_is_feasible(mut v in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        project_simplex(&mut v);
        prop_assert!(v.iter().all(|x| *x >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_projection_is_idempotent(mut v in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        project_simplex(&mut v);
        let once = v.clone();
        project_simplex(&mut v);
        for (a, b) in once.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn column_projection_gives_nonnegative_unit_sum_columns(w in sized_matrix()) {
        let mut w = w - 0.5;
        project_columns(&mut w);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
        for col in w.columns() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_matching_is_one_to_one(t in sized_matrix(), wl in sized_matrix(), r in 1usize..6) {
        let wl = Array2::from_shape_fn(t.dim(), |(i, k)| wl[[i % wl.nrows(), k % wl.ncols()]]);
        let t = AlignmentMatrix::new(&t / t.sum()).unwrap();
        let wl = AlignmentMatrix::new(&wl / wl.sum()).unwrap();
        let c = combine(&wl, &t, r, EnsembleMode::Product).unwrap();
        let (n1, n2) = t.dim();
        prop_assert_eq!(one_to_many_ratio(&c.matches.predictions(n1), None), 0.0);
        prop_assert_eq!(mutual_inconsistency_ratio(&c.matches.indicator(n1, n2), None), 0.0);
        prop_assert_eq!(c.matches.len() + c.unmatched_sources, n1);
        prop_assert!(c.matches.len() <= n1.min(n2));
    }

    #[test]
    fn hits_grow_with_k(t in (2usize..10).prop_flat_map(|n| (matrix(n, n), perm(n)))) {
        let (t, p) = t;
        let gt = GroundTruth::from_permutation(&p);
        let t = AlignmentMatrix::new(t).unwrap();
        let mut last = 0.0;
        for k in 1..=t.n2() {
            let h = hits_at_k(&t, &gt, k).unwrap();
            prop_assert!(h >= last);
            last = h;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn proximal_step_meets_marginals(c in sized_matrix(), tau in prop::sample::select(vec![0.05, 0.1, 0.5])) {
        let (n1, n2) = c.dim();
        let marg = Marginals::uniform(n1, n2).unwrap();
        let prev = AlignmentMatrix::uniform(n1, n2);
        let cfg = GwConfig { tau_t: tau, ..GwConfig::default() };
        let t = sinkhorn_proximal_step(&c, &prev, &marg, &cfg).unwrap();
        let rows = t.sum_axis(Axis(1));
        let cols = t.sum_axis(Axis(0));
        prop_assert!(rows.iter().zip(&marg.mu).all(|(a, b)| (a - b).abs() < 1e-6));
        prop_assert!(cols.iter().zip(&marg.nu).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn inter_cost_is_permutation_equivariant(
        (n, p) in (2usize..7).prop_flat_map(|n| (Just(n), perm(n))),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let cs = Array2::from_shape_simple_fn((n, n), || rng.gen::<f64>());
        let ct = Array2::from_shape_simple_fn((n, n), || rng.gen::<f64>());
        let t = Array2::from_shape_simple_fn((n, n), || rng.gen_range(0.1..1.0));
        // Relabel the target side: node k becomes p[k].
        let ct_p = Array2::from_shape_fn((n, n), |(a, b)| {
            let inv = |x: usize| p.iter().position(|&v| v == x).unwrap();
            ct[[inv(a), inv(b)]]
        });
        let t_p = Array2::from_shape_fn((n, n), |(i, a)| t[[i, p.iter().position(|&v| v == a).unwrap()]]);
        let c = inter_cost(&cs, &ct, &t, None).unwrap();
        let c_p = inter_cost(&cs, &ct_p, &t_p, None).unwrap();
        for i in 0..n {
            for k in 0..n {
                prop_assert!((c[[i, k]] - c_p[[i, p[k]]]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn encoders_are_permutation_equivariant() {
    let g = random_graph(12, 20, FeatureKind::Gaussian(5), 3).unwrap();
    let p = [4, 0, 7, 1, 11, 2, 9, 3, 10, 5, 8, 6];
    let gp = g.permuted(&p).unwrap();
    for kind in [GnnKind::Gcn, GnnKind::LightweightGcn] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = GnnParams::random(kind, 5, 6, 3, true, &mut rng).unwrap();
        let z = feat_prop_trans(&g, &params).unwrap().matrix;
        let zp = feat_prop_trans(&gp, &params).unwrap().matrix;
        for (i, &pi) in p.iter().enumerate() {
            let d = (&z.row(i) - &zp.row(pi)).mapv(f64::abs).fold(0.0, |a: f64, b| a.max(*b));
            assert!(d < 1e-12, "{kind}: row {i} differs by {d}");
        }
    }
}

#[test]
fn uniform_marginals_sum_to_one() {
    let m = Marginals::uniform(7, 3).unwrap();
    assert!((m.mu.sum() - 1.0).abs() < 1e-15);
    assert_eq!(m.nu, Array1::from_elem(3, 1.0 / 3.0));
}
