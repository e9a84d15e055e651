use std::collections::BTreeSet;

use egc_core::kernels::{fused_spmm_with, spmm, spmm_with};
use egc_core::layers::{
    combination_weights, egc_forward, egc_s_forward_with, gcn_forward, gin_forward, EgcConfig, EgcParams,
    FactorizationOrder, Linear, WeightActivation,
};
use egc_core::training::{egc_backward, egc_m_backward, egc_s_backward};
use egc_core::{Aggregator, BasisLayout, CsrGraph, ExecOptions, FusionStrategy, Matrix};
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn edges(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..4 * n)))
}

fn aggs() -> impl Strategy<Value = Vec<Aggregator>> {
    subsequence(Aggregator::ALL.to_vec(), 1..=3).prop_shuffle()
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn permute_rows(x: &Matrix<f64>, perm: &[usize]) -> Matrix<f64> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for (v, &p) in perm.iter().enumerate() {
        out.row_mut(p).copy_from_slice(x.row(v));
    }
    out
}

fn close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) -> bool {
    a.max_abs_diff(b) <= tol
}

fn layer(aggs: Vec<Aggregator>, f: usize, heads: usize, bases: usize, seed: u64) -> EgcParams<f64> {
    let cfg = EgcConfig {
        in_dim: f,
        out_dim: 2 * heads,
        heads,
        bases,
        aggs,
        activation: WeightActivation::Identity,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EgcParams::init(cfg, &mut rng).unwrap();
    p.bias = Matrix::<f64>::uniform(1, p.bias.len(), 1.0, &mut rng).into_vec();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csr_round_trips_the_deduplicated_edge_set((n, e) in edges(40)) {
        let g = CsrGraph::from_edges(&e, n).unwrap();
        let want: BTreeSet<_> = e.iter().copied().collect();
        let got: BTreeSet<_> = g.to_edge_list().into_iter().collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn self_loops_are_idempotent((n, e) in edges(40)) {
        let once = CsrGraph::from_edges(&e, n).unwrap().add_self_loops();
        prop_assert_eq!(once.add_self_loops(), once);
    }

    #[test]
    fn symmetric_coefficients_on_undirected_graphs((n, e) in edges(40)) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let mut coeff = std::collections::BTreeMap::new();
        for i in 0..n {
            for k in g.row_range(i) {
                coeff.insert((g.col_idx()[k] as usize, i), g.edge_weight(k));
            }
        }
        for (&(s, d), &c) in &coeff {
            prop_assert_eq!(coeff[&(d, s)], c);
        }
    }

    #[test]
    fn regular_rings_have_unit_row_sums(n in 3usize..60, k in 1usize..3) {
        let e: Vec<_> = (0..n).flat_map(|v| (1..=k).map(move |d| (v, (v + d) % n))).collect();
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        for i in 0..n {
            let s: f64 = g.row_range(i).map(|k| g.edge_weight(k) as f64).sum();
            prop_assert!(s <= 1.0 + 1e-6 && (s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fused_kernels_are_permutation_equivariant(
        (n, e) in edges(30), aggs in aggs(), heads in 1usize..3, bases in 1usize..3, seed: u64,
    ) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let perm = permutation(n, seed);
        let gp = g.permute(&perm).unwrap();
        let layout = BasisLayout { heads, bases };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Matrix::<f64>::uniform(n, 3 * bases, 1.0, &mut rng);
        let w = Matrix::<f64>::uniform(n, layout.weight_cols(aggs.len()), 1.0, &mut rng);
        let (zp, wp) = (permute_rows(&z, &perm), permute_rows(&w, &perm));
        for s in FusionStrategy::ALL {
            let opts = ExecOptions::default();
            let y = fused_spmm_with(&g, &z, &aggs, &w, s, layout, &opts).unwrap().0;
            let yp = fused_spmm_with(&gp, &zp, &aggs, &wp, s, layout, &opts).unwrap().0;
            prop_assert!(close(&permute_rows(&y, &perm), &yp, 1e-9));
        }
    }

    #[test]
    fn outputs_do_not_depend_on_thread_count(
        (n, e) in edges(60), aggs in aggs(), threads in 2usize..6, seed: u64,
    ) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Matrix::<f32>::uniform(n, 5, 1.0, &mut rng);
        let w = Matrix::<f32>::uniform(n, aggs.len(), 1.0, &mut rng);
        let (one, many) = (ExecOptions::with_threads(1), ExecOptions::with_threads(threads));
        prop_assert_eq!(spmm_with(&g, &z, &one).unwrap().0, spmm_with(&g, &z, &many).unwrap().0);
        for s in FusionStrategy::ALL {
            let a = fused_spmm_with(&g, &z, &aggs, &w, s, BasisLayout::default(), &one).unwrap().0;
            let b = fused_spmm_with(&g, &z, &aggs, &w, s, BasisLayout::default(), &many).unwrap().0;
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn strategies_agree((n, e) in edges(40), aggs in aggs(), seed: u64) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Matrix::<f32>::uniform(n, 7, 1.0, &mut rng);
        let w = Matrix::<f32>::uniform(n, aggs.len(), 1.0, &mut rng);
        let run = |s| fused_spmm_with(&g, &z, &aggs, &w, s, BasisLayout::default(), &ExecOptions::default()).unwrap().0;
        let seq = run(FusionStrategy::Sequential);
        prop_assert!(seq.max_abs_diff(&run(FusionStrategy::FusedOrdered)) <= 1e-5);
        prop_assert!(seq.max_abs_diff(&run(FusionStrategy::FusedWeightedStore)) <= 1e-5);
    }

    #[test]
    fn layers_are_permutation_equivariant(
        (n, e) in edges(25), aggs in aggs(), heads in 1usize..3, bases in 1usize..3, seed: u64,
    ) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let perm = permutation(n, seed);
        let gp = g.permute(&perm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Matrix::<f64>::uniform(n, 4, 1.0, &mut rng);
        let xp = permute_rows(&x, &perm);
        let opts = ExecOptions::default();
        for p in [layer(aggs.clone(), 4, heads, bases, seed), layer(vec![Aggregator::SymNorm], 4, heads, bases, seed)] {
            let y = egc_forward(&g, &x, &p, &opts).unwrap();
            prop_assert_eq!(y.cols(), p.config.out_dim);
            prop_assert!(close(&permute_rows(&y, &perm), &egc_forward(&gp, &xp, &p, &opts).unwrap(), 1e-9));
        }
        let theta = Matrix::<f64>::uniform(3, 4, 1.0, &mut rng);
        let y = gcn_forward(&g, &x, &theta).unwrap();
        prop_assert!(close(&permute_rows(&y, &perm), &gcn_forward(&gp, &xp, &theta).unwrap(), 1e-9));
        let f = Linear::<f64>::init(4, 3, &mut rng);
        let y = gin_forward(&g, &x, 0.2, &f).unwrap();
        prop_assert!(close(&permute_rows(&y, &perm), &gin_forward(&gp, &xp, 0.2, &f).unwrap(), 1e-9));
    }

    #[test]
    fn single_aggregator_output_is_quadratic_in_x(
        (n, e) in edges(25), heads in 1usize..4, bases in 1usize..4, c in -3.0f64..3.0, seed: u64,
    ) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let mut p = layer(vec![Aggregator::SymNorm], 4, heads, bases, seed);
        p.bias.iter_mut().for_each(|b| *b = 0.0);
        let x = Matrix::<f64>::uniform(n, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let opts = ExecOptions::default();
        let y = egc_forward(&g, &x, &p, &opts).unwrap();
        let yc = egc_forward(&g, &x.scale(c), &p, &opts).unwrap();
        prop_assert!(close(&y.scale(c * c), &yc, 1e-9));
        let w = combination_weights(&x, &p).unwrap();
        prop_assert!(close(&w.scale(c), &combination_weights(&x.scale(c), &p).unwrap(), 1e-12));
    }

    #[test]
    fn factorization_orders_agree((n, e) in edges(30), heads in 1usize..3, bases in 1usize..4, seed: u64) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let p = layer(vec![Aggregator::SymNorm], 5, heads, bases, seed);
        let x = Matrix::<f64>::uniform(n, 5, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let opts = ExecOptions::default();
        let a = egc_s_forward_with(&g, &x, &p, FactorizationOrder::TransformThenPropagate, &opts).unwrap();
        let b = egc_s_forward_with(&g, &x, &p, FactorizationOrder::PropagateThenTransform, &opts).unwrap();
        let scale = a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(a.max_abs_diff(&b) <= 1e-6 * scale);
    }

    #[test]
    fn spmm_is_linear((n, e) in edges(30), c in -4.0f64..4.0, seed: u64) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::<f64>::uniform(n, 3, 1.0, &mut rng);
        let y = Matrix::<f64>::uniform(n, 3, 1.0, &mut rng);
        let mut sum = x.scale(c);
        sum.add_assign(&y);
        let mut want = spmm(&g, &x).unwrap().scale(c);
        want.add_assign(&spmm(&g, &y).unwrap());
        prop_assert!(close(&spmm(&g, &sum).unwrap(), &want, 1e-9));
    }

    #[test]
    fn symnorm_gradients_collapse((n, e) in edges(20), heads in 1usize..3, bases in 1usize..3, seed: u64) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let p = layer(vec![Aggregator::SymNorm], 3, heads, bases, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::<f64>::uniform(n, 3, 1.0, &mut rng);
        let up = Matrix::<f64>::uniform(n, p.config.out_dim, 1.0, &mut rng);
        let opts = ExecOptions::default();
        let s = egc_s_backward(&g, &x, &p, &up, &opts).unwrap();
        let m = egc_m_backward(&g, &x, &p, &up, &opts).unwrap();
        for (a, b) in s.tensors().iter().zip(m.tensors()) {
            prop_assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() <= 1e-10));
        }
        prop_assert!(s.d_x.max_abs_diff(&m.d_x) <= 1e-10);
    }

    #[test]
    fn gradients_are_finite_and_shaped((n, e) in edges(20), aggs in aggs(), seed: u64) {
        let g = CsrGraph::from_undirected_edges(&e, n).unwrap().normalized();
        let p = layer(aggs, 3, 2, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::<f64>::uniform(n, 3, 1.0, &mut rng);
        let up = Matrix::<f64>::uniform(n, p.config.out_dim, 1.0, &mut rng);
        let gb = egc_backward(&g, &x, &p, &up, &ExecOptions::default()).unwrap();
        prop_assert!(gb.is_finite());
        prop_assert_eq!(gb.d_theta.len(), p.theta.len());
        for (d, t) in gb.d_theta.iter().zip(&p.theta) {
            prop_assert_eq!((d.rows(), d.cols()), (t.rows(), t.cols()));
        }
        prop_assert_eq!((gb.d_phi[0].rows(), gb.d_phi[0].cols()), (p.phi.rows(), p.phi.cols()));
        prop_assert_eq!(gb.d_bias[0].len(), p.bias.len());
    }
}
