//! Deterministic synthetic graphs for tests, toy tasks and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CsrGraph;
use crate::error::{EgcError, Result};

/// Undirected synthetic topology. Every generator emits symmetric edge sets
/// without self-loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    ErdosRenyi { n: usize, p: f64 },
    Grid { rows: usize, cols: usize },
    Star { n: usize },
}

impl GraphSpec {
    pub fn num_nodes(&self) -> usize {
        match *self {
            GraphSpec::ErdosRenyi { n, .. } | GraphSpec::Star { n } => n,
            GraphSpec::Grid { rows, cols } => rows * cols,
        }
    }

    /// Short human-readable label, stable across runs.
    pub fn label(&self) -> String {
        match self {
            GraphSpec::ErdosRenyi { n, p } => format!("er(n={n};p={p})"),
            GraphSpec::Grid { rows, cols } => format!("grid({rows}x{cols})"),
            GraphSpec::Star { n } => format!("star({n})"),
        }
    }
}

pub fn generate_graph(spec: &GraphSpec, seed: u64) -> Result<CsrGraph> {
    if spec.num_nodes() == 0 {
        return Err(EgcError::config("graph must have at least one node"));
    }
    match *spec {
        GraphSpec::ErdosRenyi { n, p } => {
            check_probability(p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let edges = er_pairs(n, p, &mut rng);
            CsrGraph::from_undirected_edges(&edges, n)
        }
        GraphSpec::Grid { rows, cols } => {
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let v = r * cols + c;
                    if c + 1 < cols {
                        edges.push((v, v + 1));
                    }
                    if r + 1 < rows {
                        edges.push((v, v + cols));
                    }
                }
            }
            CsrGraph::from_undirected_edges(&edges, rows * cols)
        }
        GraphSpec::Star { n } => {
            let edges: Vec<_> = (1..n).map(|leaf| (0, leaf)).collect();
            CsrGraph::from_undirected_edges(&edges, n)
        }
    }
}

/// Two-or-more block stochastic graph: pairs inside a block connect with
/// `p_in`, pairs across blocks with `p_out`. Returns the graph and the block
/// id of every node. Quadratic in `n`; meant for small toy graphs.
pub fn planted_partition(
    block_sizes: &[usize],
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(CsrGraph, Vec<usize>)> {
    check_probability(p_in)?;
    check_probability(p_out)?;
    let block: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = block.len();
    if n == 0 {
        return Err(EgcError::config("planted partition needs at least one node"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block[u] == block[v] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Ok((CsrGraph::from_undirected_edges(&edges, n)?, block))
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(EgcError::config(format!("edge probability {p} not in [0, 1]")))
    }
}

/// Unordered pairs `(v, w)`, `w < v`, each present independently with
/// probability `p`. Uses geometric skips over the lower triangle so the cost
/// is linear in nodes plus edges.
fn er_pairs<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    if p <= 0.0 || n < 2 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (1..n).flat_map(|v| (0..v).map(move |w| (v, w))).collect();
    }
    let log_q = (1.0 - p).ln();
    let mut edges = Vec::with_capacity((p * (n * (n - 1) / 2) as f64 * 1.1) as usize);
    let mut v: usize = 1;
    let mut w: i64 = -1;
    while v < n {
        let r: f64 = rng.random();
        w += 1 + ((1.0 - r).ln() / log_q).floor() as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            edges.push((v, w as usize));
        }
    }
    edges
}
