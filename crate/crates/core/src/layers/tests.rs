use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{generate_graph, GraphSpec};
use crate::kernels::STD_EPS;

fn two_node() -> CsrGraph {
    CsrGraph::from_undirected_edges(&[(0, 1)], 2).unwrap().normalized()
}

fn col(v: &[f64]) -> Matrix<f64> {
    Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
}

fn cfg(in_dim: usize, out_dim: usize, heads: usize, bases: usize, aggs: &[Aggregator]) -> EgcConfig {
    EgcConfig {
        in_dim,
        out_dim,
        heads,
        bases,
        aggs: aggs.to_vec(),
        activation: WeightActivation::Identity,
    }
}

/// Params whose combination weights are the constant `w` (zero Φ, bias `w`).
fn constant_weights(c: EgcConfig, theta: Vec<Matrix<f64>>, w: f64) -> EgcParams<f64> {
    let wc = c.weight_cols();
    let f = c.in_dim;
    EgcParams::from_parts(c, theta, Matrix::zeros(wc, f), vec![w; wc]).unwrap()
}

fn random_params(c: EgcConfig, seed: u64) -> EgcParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EgcParams::<f64>::init(c, &mut rng).unwrap();
    p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    p
}

/// Literal evaluation of one aggregator over explicit values.
fn dense_agg(a: Aggregator, vals: &[f64], coeffs: &[f64]) -> f64 {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = (vals.iter().map(|v| v * v).sum::<f64>() / n - mean * mean).max(0.0);
    match a {
        Aggregator::SymNorm => vals.iter().zip(coeffs).map(|(v, c)| v * c).sum(),
        Aggregator::Sum => vals.iter().sum(),
        Aggregator::Mean => mean,
        Aggregator::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::Min => vals.iter().cloned().fold(f64::INFINITY, f64::min),
        Aggregator::Var => var,
        Aggregator::Std => (var + STD_EPS).sqrt(),
    }
}

/// Node-by-node evaluation of the layer straight from its definition, using
/// a dense self-looped adjacency built from the raw edge list.
fn dense_egc(n: usize, edges: &[(usize, usize)], x: &Matrix<f64>, p: &EgcParams<f64>) -> Matrix<f64> {
    let mut adj = vec![vec![false; n]; n];
    for &(u, v) in edges {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    (0..n).for_each(|i| adj[i][i] = true);
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().filter(|&&b| b).count() as f64).collect();
    let c = &p.config;
    let d = c.head_dim();
    let mut y = Matrix::zeros(n, c.out_dim);
    for i in 0..n {
        let w: Vec<f64> = (0..c.weight_cols())
            .map(|k| (0..c.in_dim).map(|f| p.phi.get(k, f) * x.get(i, f)).sum::<f64>() + p.bias[k])
            .collect();
        let nbrs: Vec<usize> = (0..n).filter(|&j| adj[i][j]).collect();
        let coeffs: Vec<f64> = nbrs.iter().map(|&j| 1.0 / (deg[i] * deg[j]).sqrt()).collect();
        for h in 0..c.heads {
            for t in 0..d {
                let mut acc = 0.0;
                for (a_idx, &a) in c.aggs.iter().enumerate() {
                    for b in 0..c.bases {
                        let vals: Vec<f64> = nbrs
                            .iter()
                            .map(|&j| (0..c.in_dim).map(|f| p.theta[b].get(t, f) * x.get(j, f)).sum())
                            .collect();
                        acc += w[(h * c.aggs.len() + a_idx) * c.bases + b] * dense_agg(a, &vals, &coeffs);
                    }
                }
                y.set(i, h * d + t, acc);
            }
        }
    }
    y
}

fn random_edges(n: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    generate_graph(&GraphSpec::ErdosRenyi { n, p }, seed)
        .unwrap()
        .to_edge_list()
        .into_iter()
        .filter(|(u, v)| u < v)
        .collect()
}

#[test]
fn combination_weight_examples() {
    let p = EgcParams::from_parts(
        cfg(1, 1, 1, 1, &[Aggregator::Sum]),
        vec![Matrix::filled(1, 1, 1.0)],
        Matrix::filled(1, 1, 2.0),
        vec![0.5],
    )
    .unwrap();
    assert_eq!(combination_weights(&col(&[1.0]), &p).unwrap().as_slice(), &[2.5]);

    let zero = constant_weights(cfg(1, 1, 1, 1, &[Aggregator::Sum]), vec![Matrix::filled(1, 1, 1.0)], 0.0);
    let g = two_node();
    assert_eq!(egc_m_forward(&g, &col(&[1.0, 3.0]), &zero).unwrap().as_slice(), &[0.0, 0.0]);

    let mut row = [0.0f64, 0.0];
    WeightActivation::Softmax.apply(&mut row, 2);
    assert_eq!(row, [0.5, 0.5]);
}

#[test]
fn activations_round_trip_tags_and_gradients() {
    let acts = [
        WeightActivation::Identity,
        WeightActivation::Softmax,
        WeightActivation::Sigmoid,
        WeightActivation::Hardtanh,
    ];
    let pre = [0.3f64, -1.7, 0.9, 0.2, 1.4, -0.4];
    let up = [0.5f64, -1.0, 2.0, 0.25, -0.75, 1.5];
    for a in acts {
        assert_eq!(WeightActivation::from_tag(a.tag()), Some(a));
        let mut post = pre;
        a.apply(&mut post, 3);
        let mut grad = up;
        a.backward(&pre, &post, &mut grad, 3);
        let loss = |v: &[f64]| {
            let mut o = v.to_vec();
            a.apply(&mut o, 3);
            o.iter().zip(&up).map(|(x, u)| x * u).sum::<f64>()
        };
        for k in 0..pre.len() {
            let (mut hi, mut lo) = (pre, pre);
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            let fd = (loss(&hi) - loss(&lo)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-6, "{a:?} coordinate {k}: {fd} vs {}", grad[k]);
        }
    }
    assert_eq!(WeightActivation::from_tag(4), None);
}

#[test]
fn egc_s_reduces_to_gcn() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = generate_graph(&GraphSpec::ErdosRenyi { n: 30, p: 0.15 }, seed).unwrap().normalized();
        let theta = Matrix::<f64>::uniform(3, 4, 1.0, &mut rng);
        let x = Matrix::<f64>::uniform(30, 4, 1.0, &mut rng);
        let p = constant_weights(cfg(4, 3, 1, 1, &[Aggregator::SymNorm]), vec![theta.clone()], 1.0);
        let y = egc_s_forward(&g, &x, &p).unwrap();
        assert!(y.max_abs_diff(&gcn_forward(&g, &x, &theta).unwrap()) < 1e-12);
    }
}

#[test]
fn egc_s_isolated_node() {
    let g = CsrGraph::empty(1).normalized();
    let p = constant_weights(cfg(1, 1, 1, 1, &[Aggregator::SymNorm]), vec![Matrix::filled(1, 1, 2.0)], 3.0);
    assert_eq!(egc_s_forward(&g, &col(&[5.0]), &p).unwrap().as_slice(), &[30.0]);
}

#[test]
fn egc_s_factorization_orders_agree() {
    let g = generate_graph(&GraphSpec::ErdosRenyi { n: 40, p: 0.1 }, 3).unwrap().normalized();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Matrix::<f64>::uniform(40, 6, 1.0, &mut rng);
    let p = random_params(cfg(6, 8, 4, 2, &[Aggregator::SymNorm]), 4);
    let opts = ExecOptions::default();
    let a = egc_s_forward_with(&g, &x, &p, FactorizationOrder::TransformThenPropagate, &opts).unwrap();
    let b = egc_s_forward_with(&g, &x, &p, FactorizationOrder::PropagateThenTransform, &opts).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn egc_s_rejects_bad_inputs() {
    let g = two_node();
    let x = col(&[1.0, 3.0]);
    let sum = random_params(cfg(1, 2, 1, 1, &[Aggregator::Sum]), 1);
    assert!(matches!(egc_s_forward(&g, &x, &sum), Err(EgcError::Config(_))));
    let p = random_params(cfg(1, 2, 1, 1, &[Aggregator::SymNorm]), 1);
    let bare = CsrGraph::from_undirected_edges(&[(0, 1)], 2).unwrap().add_self_loops();
    assert!(matches!(egc_s_forward(&bare, &x, &p), Err(EgcError::MissingCoefficients)));
    assert!(egc_s_forward(&g, &Matrix::zeros(2, 3), &p).is_err());
}

#[test]
fn egc_m_hand_example() {
    let p = constant_weights(
        cfg(1, 1, 1, 1, &[Aggregator::Sum, Aggregator::Max, Aggregator::Min]),
        vec![Matrix::filled(1, 1, 1.0)],
        1.0,
    );
    let y = egc_m_forward(&two_node(), &col(&[1.0, 3.0]), &p).unwrap();
    assert_eq!(y.get(0, 0), 8.0);
}

#[test]
fn egc_m_zero_features() {
    let g = generate_graph(&GraphSpec::ErdosRenyi { n: 20, p: 0.2 }, 1).unwrap().normalized();
    let x = Matrix::<f64>::zeros(20, 3);
    let linear = [
        Aggregator::Sum,
        Aggregator::SymNorm,
        Aggregator::Mean,
        Aggregator::Max,
        Aggregator::Min,
    ];
    let p = random_params(cfg(3, 4, 2, 2, &linear), 2);
    assert!(egc_m_forward(&g, &x, &p).unwrap().as_slice().iter().all(|&v| v == 0.0));

    // Std contributes w · sqrt(eps) per basis
    let p = constant_weights(cfg(3, 2, 1, 2, &[Aggregator::Std]), random_params(cfg(3, 2, 1, 2, &[Aggregator::Std]), 3).theta, 0.5);
    let y = egc_m_forward(&g, &x, &p).unwrap();
    let want = 2.0 * 0.5 * STD_EPS.sqrt();
    assert!(y.as_slice().iter().all(|&v| (v - want).abs() < 1e-15));
}

#[test]
fn egc_m_matches_dense_definition() {
    let all = Aggregator::ALL;
    let shapes = [(1, 1, &all[..]), (2, 3, &all[..3]), (4, 2, &all[3..]), (2, 2, &all[1..6])];
    for (k, (heads, bases, aggs)) in shapes.into_iter().enumerate() {
        let seed = k as u64;
        let edges = random_edges(15, 0.2, seed);
        let g = CsrGraph::from_undirected_edges(&edges, 15).unwrap().normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x = Matrix::<f64>::uniform(15, 5, 1.0, &mut rng);
        let p = random_params(cfg(5, 2 * heads, heads, bases, aggs), seed);
        let want = dense_egc(15, &edges, &x, &p);
        for s in FusionStrategy::ALL {
            let y = egc_m_forward_with(&g, &x, &p, s, &ExecOptions::default()).unwrap();
            // edge coefficients are stored in single precision
            assert!(y.max_abs_diff(&want) < 1e-6, "{s} H={heads} B={bases}: {}", y.max_abs_diff(&want));
        }
    }
}

#[test]
fn egc_m_collapses_to_egc_s() {
    let g = generate_graph(&GraphSpec::ErdosRenyi { n: 25, p: 0.2 }, 8).unwrap().normalized();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Matrix::<f64>::uniform(25, 4, 1.0, &mut rng);
    let p = random_params(cfg(4, 8, 4, 2, &[Aggregator::SymNorm]), 9);
    let s = egc_s_forward(&g, &x, &p).unwrap();
    let m = egc_m_forward(&g, &x, &p).unwrap();
    assert!(s.max_abs_diff(&m) < 1e-12);
    assert_eq!(egc_forward(&g, &x, &p, &ExecOptions::default()).unwrap(), s);
}

#[test]
fn output_width_is_out_dim_for_every_head_count() {
    let g = two_node();
    let x = Matrix::<f64>::filled(2, 3, 0.5);
    for heads in [1, 2, 4, 8] {
        let p = random_params(cfg(3, 8, heads, 2, &[Aggregator::Max, Aggregator::Mean]), heads as u64);
        assert_eq!(egc_m_forward(&g, &x, &p).unwrap().cols(), 8);
    }
}

#[test]
fn gcn_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = CsrGraph::empty(3).normalized();
    let x = Matrix::<f64>::uniform(3, 4, 1.0, &mut rng);
    let theta = Matrix::<f64>::uniform(2, 4, 1.0, &mut rng);
    assert!(gcn_forward(&g, &x, &theta).unwrap().max_abs_diff(&x.matmul_t(&theta).unwrap()) < 1e-15);
    let y = gcn_forward(&two_node(), &col(&[1.0, 3.0]), &Matrix::filled(1, 1, 1.0)).unwrap();
    assert_eq!(y.as_slice(), &[2.0, 2.0]);
    let bare = CsrGraph::empty(3);
    assert!(matches!(gcn_forward(&bare, &x, &theta), Err(EgcError::MissingCoefficients)));
}

#[test]
fn gin_examples() {
    let g = CsrGraph::from_undirected_edges(&[(0, 1)], 2).unwrap();
    let x = col(&[1.0, 3.0]);
    let id = Linear::identity(1);
    assert_eq!(gin_forward(&g, &x, 0.0, &id).unwrap().as_slice(), &[4.0, 4.0]);
    assert_eq!(gin_forward(&g, &x, -1.0, &id).unwrap().as_slice(), &[3.0, 1.0]);
    // self-loops in the graph do not double-count the centre node
    assert_eq!(gin_forward(&g.normalized(), &x, 0.0, &id).unwrap().as_slice(), &[4.0, 4.0]);
    let f = Linear {
        weight: Matrix::filled(2, 1, 2.0),
        bias: vec![1.0, -1.0],
    };
    let y = gin_forward(&CsrGraph::empty(2), &x, 0.5, &f).unwrap();
    assert_eq!(y.as_slice(), &[4.0, 2.0, 10.0, 8.0]);
}

fn reggc_cfg(rel: usize, types: usize, heads: usize, bases: usize) -> ReggcConfig {
    ReggcConfig {
        in_dim: 3,
        out_dim: 2 * heads,
        heads,
        bases,
        num_relations: rel,
        num_node_types: types,
        activation: WeightActivation::Identity,
    }
}

#[test]
fn r_egc_without_relations_is_self_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = NodeTypedGraph::new(vec![], vec![0, 1, 0], 2).unwrap();
    let p = ReggcParams::<f64>::init(reggc_cfg(0, 2, 2, 2), &mut rng).unwrap();
    let x = Matrix::<f64>::uniform(3, 3, 1.0, &mut rng);
    let y = r_egc_forward(&g, &x, &p).unwrap();
    let z = x.matmul_t(&stack_rows(&p.theta)).unwrap();
    for i in 0..3 {
        let t = g.node_type()[i] as usize;
        for h in 0..2 {
            for d in 0..2 {
                let want: f64 = (0..2)
                    .map(|b| {
                        let w = crate::matrix::dot(p.type_phi[t].row(h * 2 + b), x.row(i)) + p.type_bias[t][h * 2 + b];
                        w * z.get(i, b * 2 + d)
                    })
                    .sum();
                assert!((y.get(i, h * 2 + d) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn r_egc_constant_weights_hand_example() {
    // 0 -> 1 only: node 1 averages node 0, node 0 has no neighbors
    let rel = CsrGraph::from_edges(&[(0, 1)], 2).unwrap();
    let g = NodeTypedGraph::new(vec![rel], vec![0, 0], 1).unwrap();
    let c = ReggcConfig {
        in_dim: 1,
        out_dim: 1,
        ..reggc_cfg(1, 1, 1, 1)
    };
    let p = ReggcParams {
        theta: vec![Matrix::filled(1, 1, 2.0)],
        type_phi: vec![Matrix::zeros(1, 1)],
        type_bias: vec![vec![1.0]],
        rel_phi: vec![Matrix::zeros(1, 1)],
        rel_bias: vec![vec![1.0]],
        config: c,
    };
    let y = r_egc_forward(&g, &col(&[1.0, 3.0]), &p).unwrap();
    assert_eq!(y.as_slice(), &[2.0, 6.0 + 2.0]);
}

#[test]
fn r_egc_matches_dense_relation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 12;
    let rels: Vec<Vec<(usize, usize)>> = (0..3)
        .map(|r| {
            (0..n * n)
                .map(|k| (k / n, k % n))
                .filter(|_| rng.random_bool(0.15 + 0.05 * r as f64))
                .collect()
        })
        .collect();
    let types: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
    let g = NodeTypedGraph::new(
        rels.iter().map(|e| CsrGraph::from_edges(e, n).unwrap()).collect(),
        types.clone(),
        2,
    )
    .unwrap();
    let mut c = reggc_cfg(3, 2, 2, 3);
    c.activation = WeightActivation::Sigmoid;
    let mut p = ReggcParams::<f64>::init(c, &mut rng).unwrap();
    p.rel_bias.iter_mut().flatten().for_each(|b| *b = rng.random_range(-1.0..1.0));
    let x = Matrix::<f64>::uniform(n, 3, 1.0, &mut rng);
    let y = r_egc_forward(&g, &x, &p).unwrap();

    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let theta_x = |b: usize, j: usize, d: usize| (0..3).map(|f| p.theta[b].get(d, f) * x.get(j, f)).sum::<f64>();
    for i in 0..n {
        for h in 0..2 {
            for d in 0..2 {
                let t = types[i] as usize;
                let mut want = 0.0;
                for b in 0..3 {
                    let k = h * 3 + b;
                    want += sig(crate::matrix::dot(p.type_phi[t].row(k), x.row(i)) + p.type_bias[t][k]) * theta_x(b, i, d);
                }
                for (r, edges) in rels.iter().enumerate() {
                    let mut srcs: Vec<usize> = edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect();
                    srcs.sort();
                    srcs.dedup();
                    if srcs.is_empty() {
                        continue;
                    }
                    for b in 0..3 {
                        let k = h * 3 + b;
                        let w = sig(crate::matrix::dot(p.rel_phi[r].row(k), x.row(i)) + p.rel_bias[r][k]);
                        let mean = srcs.iter().map(|&j| theta_x(b, j, d)).sum::<f64>() / srcs.len() as f64;
                        want += w * mean;
                    }
                }
                assert!((y.get(i, h * 2 + d) - want).abs() < 1e-12, "node {i}");
            }
        }
    }
}

#[test]
fn r_egc_rejects_mismatches() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = ReggcParams::<f64>::init(reggc_cfg(1, 1, 1, 1), &mut rng).unwrap();
    let g = NodeTypedGraph::new(vec![], vec![0, 0], 1).unwrap();
    assert!(r_egc_forward(&g, &Matrix::zeros(2, 3), &p).is_err());
    let g = NodeTypedGraph::new(vec![CsrGraph::empty(2)], vec![0, 1], 2).unwrap();
    assert!(r_egc_forward(&g, &Matrix::zeros(2, 3), &p).is_err());
}

#[test]
fn param_count_examples() {
    assert_eq!(cfg(4, 4, 1, 1, &[Aggregator::Sum]).param_count().unwrap(), 21);
    assert!(cfg(4, 4, 1, 0, &[Aggregator::Sum]).param_count().is_err());
    let theta_part = |h| cfg(16, 16, h, 2, &[Aggregator::Sum]);
    let t = |c: &EgcConfig| c.bases * c.head_dim() * c.in_dim;
    assert_eq!(t(&theta_part(2)), 2 * t(&theta_part(4)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = cfg(6, 8, 4, 2, &[Aggregator::Sum, Aggregator::Max]);
    let p = EgcParams::<f32>::init(c.clone(), &mut rng).unwrap();
    assert_eq!(p.param_count(), c.param_count().unwrap());
}

#[test]
fn config_validation() {
    assert!(cfg(4, 6, 4, 1, &[Aggregator::Sum]).validate().is_err());
    assert!(cfg(4, 4, 1, 1, &[]).validate().is_err());
    assert!(cfg(4, 4, 1, 1, &[Aggregator::Max, Aggregator::Max]).validate().is_err());
    assert_eq!(EgcConfig::single(8, 16).heads, 8);
    assert_eq!(EgcConfig::multi(8, 16, vec![Aggregator::Sum]).bases, 4);
    let mut p = random_params(cfg(2, 2, 1, 2, &[Aggregator::Sum]), 1);
    p.theta.pop();
    assert!(p.validate().is_err());
}

#[test]
fn init_scale_and_zero_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = EgcParams::<f64>::init(cfg(16, 8, 2, 2, &[Aggregator::Sum]), &mut rng).unwrap();
    assert!(p.bias.iter().all(|&b| b == 0.0));
    let within = |m: &Matrix<f64>| m.as_slice().iter().all(|v| v.abs() <= 0.25);
    assert!(p.theta.iter().all(within) && within(&p.phi));
}

#[test]
fn memory_probe_examples() {
    let sparse = generate_graph(&GraphSpec::ErdosRenyi { n: 1000, p: 0.005 }, 1).unwrap();
    let dense = generate_graph(&GraphSpec::ErdosRenyi { n: 1000, p: 0.01 }, 1).unwrap();
    let aggs = [Aggregator::Sum, Aggregator::Max];
    let a = memory_probe(ProbeKind::Egc, &sparse, 16, 2, &aggs).unwrap();
    let b = memory_probe(ProbeKind::Egc, &dense, 16, 2, &aggs).unwrap();
    assert_eq!(a, b);
    let ma = memory_probe(ProbeKind::MaterializedMessages, &sparse, 16, 2, &aggs).unwrap();
    let mb = memory_probe(ProbeKind::MaterializedMessages, &dense, 16, 2, &aggs).unwrap();
    let ratio = mb.peak_transient_elems as f64 / ma.peak_transient_elems as f64;
    assert!((ratio - 2.0).abs() < 0.2, "{ratio}");

    let empty = memory_probe(ProbeKind::MaterializedMessages, &CsrGraph::empty(5), 8, 1, &aggs).unwrap();
    assert_eq!(empty.peak_transient_elems, 0);

    let single = memory_probe(ProbeKind::Egc, &CsrGraph::empty(1).add_self_loops(), 8, 2, &[Aggregator::Sum]).unwrap();
    assert_eq!(single.transformed_elems, 16);
    assert_eq!(single.kernel_elems, 0);
}

#[test]
fn model_stack_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = ModelSpec {
        in_dim: 5,
        hidden: 8,
        out_dim: 3,
        num_layers: 3,
        heads: 4,
        bases: 2,
        aggs: vec![Aggregator::Sum, Aggregator::Max],
        activation: WeightActivation::Identity,
    };
    let m = EgcModel::<f32>::init(&spec, &mut rng).unwrap();
    assert_eq!((m.in_dim(), m.out_dim(), m.layers.len()), (5, 3, 3));
    let g = generate_graph(&GraphSpec::ErdosRenyi { n: 20, p: 0.2 }, 1).unwrap().normalized();
    let x = Matrix::<f32>::uniform(20, 5, 1.0, &mut rng);
    let y = m.forward(&g, &x, &ExecOptions::default()).unwrap();
    assert_eq!((y.rows(), y.cols()), (20, 3));
    assert_eq!(m.forward(&g, &x, &ExecOptions::with_threads(3)).unwrap(), y);

    let mut broken = m.clone();
    broken.layers[1].config.in_dim = 4;
    assert!(broken.validate().is_err());
}

fn sample_model(seed: u64) -> EgcModel<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec {
        in_dim: 3,
        hidden: 4,
        out_dim: 2,
        num_layers: 2,
        heads: 2,
        bases: 2,
        aggs: vec![Aggregator::Std, Aggregator::SymNorm],
        activation: WeightActivation::Softmax,
    };
    EgcModel::init(&spec, &mut rng).unwrap()
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let m = sample_model(3);
    let mut a = Vec::new();
    write_checkpoint(&m, &mut a).unwrap();
    let back = read_checkpoint(a.as_slice()).unwrap();
    assert_eq!(back, m);
    let mut b = Vec::new();
    write_checkpoint(&back, &mut b).unwrap();
    assert_eq!(a, b);

    let bare = EgcModel::new(m.layers.clone(), None).unwrap();
    let mut c = Vec::new();
    write_checkpoint(&bare, &mut c).unwrap();
    assert_eq!(read_checkpoint(c.as_slice()).unwrap(), bare);
}

#[test]
fn checkpoint_layout_of_a_single_layer() {
    let p = EgcParams::from_parts(
        cfg(1, 1, 1, 1, &[Aggregator::Max]),
        vec![Matrix::filled(1, 1, 2.0f32)],
        Matrix::filled(1, 1, 3.0),
        vec![4.0],
    )
    .unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&EgcModel::new(vec![p], None).unwrap(), &mut buf).unwrap();
    let mut want = b"EGCP".to_vec();
    for v in [1u32, 1, 1, 1, 1, 1, 1] {
        want.extend(v.to_le_bytes());
    }
    want.extend([3u8, 0]);
    for v in [2.0f32, 3.0, 4.0] {
        want.extend(v.to_le_bytes());
    }
    want.push(0);
    assert_eq!(buf, want);
}

#[test]
fn checkpoint_rejects_corruption() {
    let mut buf = Vec::new();
    write_checkpoint(&sample_model(1), &mut buf).unwrap();
    assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
    let mut extra = buf.clone();
    extra.push(0);
    assert!(read_checkpoint(extra.as_slice()).is_err());
    let mut bad_magic = buf.clone();
    bad_magic[0] = b'X';
    assert!(read_checkpoint(bad_magic.as_slice()).is_err());
    let mut bad_version = buf.clone();
    bad_version[4] = 9;
    assert!(read_checkpoint(bad_version.as_slice()).is_err());
    // aggregator tag of the first layer
    let mut bad_tag = buf;
    bad_tag[32] = 200;
    assert!(matches!(read_checkpoint(bad_tag.as_slice()), Err(EgcError::Format { .. })));
}

#[test]
fn features_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Matrix::<f32>::uniform(7, 3, 1.0, &mut rng);
    let mut a = Vec::new();
    write_features(&x, &mut a).unwrap();
    assert_eq!(a.len(), 4 + 8 + 4 + 7 * 3 * 4);
    let back = read_features(a.as_slice()).unwrap();
    assert_eq!(back, x);
    let mut b = Vec::new();
    write_features(&back, &mut b).unwrap();
    assert_eq!(a, b);
    assert!(read_features(&a[..a.len() - 2]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.egcf");
    save_features(&x, &path).unwrap();
    assert_eq!(load_features(&path).unwrap(), x);
    let cpath = dir.path().join("m.egcp");
    let m = sample_model(4);
    save_checkpoint(&m, &cpath).unwrap();
    assert_eq!(load_checkpoint(&cpath).unwrap(), m);
}
