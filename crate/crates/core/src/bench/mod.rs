//! Wall-clock microbenchmarks for plain SpMM against the three fused
//! aggregation strategies.
//!
//! Inputs (graph, features, combination weights) are built once per graph
//! and feature width and shared by every strategy. Only the kernel call is
//! inside the timed region; the output buffer is allocated beforehand.

use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EgcError, Result};
use crate::graph::{generate_graph, CsrGraph, GraphSpec};
use crate::kernels::{self, Aggregator, BasisLayout, ExecOptions, FusionStrategy};
use crate::matrix::Matrix;

/// Iterations below this are too short to time reliably.
const MIN_STABLE_SECS: f64 = 1e-3;
/// Target total timed duration when repeats are raised for short kernels.
const SHORT_KERNEL_BUDGET_SECS: f64 = 0.05;
const MAX_REPEATS: usize = 2000;
const SPOT_CHECK_ROWS: usize = 64;
const SPOT_CHECK_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchStrategy {
    PlainSpmm,
    Sequential,
    FusedOrdered,
    FusedWeightedStore,
}

impl BenchStrategy {
    pub const ALL: [BenchStrategy; 4] = [
        BenchStrategy::PlainSpmm,
        BenchStrategy::Sequential,
        BenchStrategy::FusedOrdered,
        BenchStrategy::FusedWeightedStore,
    ];

    pub fn fusion(self) -> Option<FusionStrategy> {
        match self {
            BenchStrategy::PlainSpmm => None,
            BenchStrategy::Sequential => Some(FusionStrategy::Sequential),
            BenchStrategy::FusedOrdered => Some(FusionStrategy::FusedOrdered),
            BenchStrategy::FusedWeightedStore => Some(FusionStrategy::FusedWeightedStore),
        }
    }

    pub fn name(self) -> &'static str {
        match self.fusion() {
            None => "plain_spmm",
            Some(f) => f.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphDescriptor {
    pub label: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub strategy: BenchStrategy,
    pub graph: GraphDescriptor,
    pub features: usize,
    pub aggs: Vec<Aggregator>,
    pub repeats: usize,
    pub warmup: usize,
    pub threads: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub peak_transient_elems: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchOptions {
    pub repeats: usize,
    pub warmup: usize,
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 10,
            warmup: 3,
            threads: 1,
        }
    }
}

impl BenchOptions {
    fn validate(&self) -> Result<()> {
        if self.repeats < 5 {
            return Err(EgcError::config("repeats must be at least 5"));
        }
        if self.warmup < 2 {
            return Err(EgcError::config("warmup must be at least 2"));
        }
        if self.threads == 0 {
            return Err(EgcError::config("threads must be at least 1"));
        }
        Ok(())
    }
}

/// Shared kernel inputs: a self-looped, sym-normalized graph, `N × F`
/// features and `N × |aggs|` combination weights.
pub struct BenchInputs {
    pub graph: CsrGraph,
    pub descriptor: GraphDescriptor,
    pub x: Matrix<f32>,
    pub w: Matrix<f32>,
    pub aggs: Vec<Aggregator>,
}

impl BenchInputs {
    pub fn new(
        graph: &CsrGraph,
        label: impl Into<String>,
        graph_seed: u64,
        features: usize,
        aggs: &[Aggregator],
        seed: u64,
    ) -> Result<Self> {
        if aggs.is_empty() {
            return Err(EgcError::config("aggs must not be empty"));
        }
        let graph = graph.normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::uniform(graph.num_nodes(), features, 1.0, &mut rng);
        let w = Matrix::uniform(graph.num_nodes(), aggs.len(), 1.0, &mut rng);
        let descriptor = GraphDescriptor {
            label: label.into(),
            num_nodes: graph.num_nodes(),
            num_edges: graph.num_edges(),
            seed: graph_seed,
        };
        Ok(Self {
            graph,
            descriptor,
            x,
            w,
            aggs: aggs.to_vec(),
        })
    }

    fn run(&self, strategy: BenchStrategy, exec: &ExecOptions, out: &mut Matrix<f32>) -> usize {
        match strategy.fusion() {
            None => kernels::spmm_into(&self.graph, &self.x, out, exec).peak_transient_elems,
            Some(f) => kernels::fused_spmm_into(
                &self.graph,
                &self.x,
                &self.aggs,
                &self.w,
                f,
                BasisLayout::default(),
                exec,
                out,
            )
            .peak_transient_elems,
        }
    }

    /// Compare sampled output rows against per-row reference aggregation.
    fn spot_check(&self, strategy: BenchStrategy, out: &Matrix<f32>) -> Result<()> {
        let n = self.graph.num_nodes();
        let step = (n / SPOT_CHECK_ROWS).max(1);
        for i in (0..n).step_by(step) {
            let reference: Vec<f64> = match strategy.fusion() {
                None => {
                    let mut acc = vec![0.0f64; self.x.cols()];
                    for e in self.graph.row_range(i) {
                        let c = self.graph.edge_weight(e) as f64;
                        let xr = self.x.row(self.graph.col_idx()[e] as usize);
                        acc.iter_mut().zip(xr).for_each(|(a, &v)| *a += c * v as f64);
                    }
                    acc
                }
                Some(_) => {
                    let mut acc = vec![0.0f64; self.x.cols()];
                    for (k, &a) in self.aggs.iter().enumerate() {
                        let r = kernels::aggregate_row(&self.graph, &self.x, i, a)?;
                        let wk = self.w.get(i, k) as f64;
                        acc.iter_mut().zip(&r).for_each(|(s, &v)| *s += wk * v as f64);
                    }
                    acc
                }
            };
            for (k, (&got, want)) in out.row(i).iter().zip(reference).enumerate() {
                if (got as f64 - want).abs() > SPOT_CHECK_TOL * want.abs().max(1.0) {
                    return Err(EgcError::config(format!(
                        "{} output mismatch at ({i}, {k}): {got} vs {want}",
                        strategy.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Time one strategy on prepared inputs.
pub fn bench_kernel(
    inputs: &BenchInputs,
    strategy: BenchStrategy,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    Ok(bench_interleaved(inputs, &[strategy], opts)?.remove(0))
}

/// Time several strategies on shared inputs. After every strategy has
/// finished its warmup runs, samples are taken round-robin, one run per
/// strategy per round, so slow drift in machine load affects all
/// strategies alike instead of whichever happened to run during it.
pub fn bench_interleaved(
    inputs: &BenchInputs,
    strategies: &[BenchStrategy],
    opts: &BenchOptions,
) -> Result<Vec<BenchReport>> {
    opts.validate()?;
    let exec = ExecOptions::with_threads(opts.threads);
    let mut out = Matrix::zeros(inputs.graph.num_nodes(), inputs.x.cols());

    let mut peaks = Vec::with_capacity(strategies.len());
    let mut repeats = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let warm_start = Instant::now();
        let mut peak = 0;
        for _ in 0..opts.warmup {
            peak = inputs.run(strategy, &exec, &mut out);
            black_box(out.as_slice());
        }
        let per_iter = warm_start.elapsed().as_secs_f64() / opts.warmup as f64;
        inputs.spot_check(strategy, &out)?;
        let mut r = opts.repeats;
        if per_iter < MIN_STABLE_SECS {
            let raised = ((SHORT_KERNEL_BUDGET_SECS / per_iter.max(1e-9)).ceil() as usize).clamp(r, MAX_REPEATS);
            warn!(
                "{} on {}: {:.3} ms per iteration is below the stable-timing floor, raising repeats {} -> {}",
                strategy.name(),
                inputs.descriptor.label,
                per_iter * 1e3,
                r,
                raised
            );
            r = raised;
        }
        peaks.push(peak);
        repeats.push(r);
    }

    let rounds = repeats.iter().copied().max().unwrap_or(0);
    let mut samples: Vec<Vec<f64>> = repeats.iter().map(|&r| Vec::with_capacity(r)).collect();
    for round in 0..rounds {
        for (k, &strategy) in strategies.iter().enumerate() {
            if round >= repeats[k] {
                continue;
            }
            let start = Instant::now();
            inputs.run(strategy, &exec, &mut out);
            black_box(out.as_slice());
            samples[k].push(start.elapsed().as_secs_f64());
        }
    }

    Ok(strategies
        .iter()
        .enumerate()
        .map(|(k, &strategy)| {
            let (mean_s, std_s) = mean_std(&samples[k]);
            BenchReport {
                strategy,
                graph: inputs.descriptor.clone(),
                features: inputs.x.cols(),
                aggs: inputs.aggs.clone(),
                repeats: repeats[k],
                warmup: opts.warmup,
                threads: opts.threads,
                mean_s: mean_s.max(f64::MIN_POSITIVE),
                std_s,
                peak_transient_elems: peaks[k],
            }
        })
        .collect())
}

/// Mean and sample standard deviation.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// JSON sweep description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub graphs: Vec<GraphSpec>,
    pub strategies: Vec<BenchStrategy>,
    pub feature_dims: Vec<usize>,
    pub aggs: Vec<Aggregator>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_repeats() -> usize {
    10
}
fn default_warmup() -> usize {
    3
}
fn default_threads() -> usize {
    1
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |len: usize, field: &str| {
            if len == 0 {
                Err(EgcError::config(format!("`{field}` must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty(self.graphs.len(), "graphs")?;
        nonempty(self.strategies.len(), "strategies")?;
        nonempty(self.feature_dims.len(), "feature_dims")?;
        nonempty(self.aggs.len(), "aggs")?;
        if self.feature_dims.contains(&0) {
            return Err(EgcError::config("`feature_dims` entries must be positive"));
        }
        self.options().validate()
    }

    pub fn options(&self) -> BenchOptions {
        BenchOptions {
            repeats: self.repeats,
            warmup: self.warmup,
            threads: self.threads,
        }
    }
}

/// Cartesian sweep over graphs × feature widths × strategies.
pub fn bench_suite(cfg: &BenchConfig) -> Result<Vec<BenchReport>> {
    cfg.validate()?;
    let opts = cfg.options();
    let mut reports = Vec::new();
    for (gi, spec) in cfg.graphs.iter().enumerate() {
        let graph_seed = cfg.seed.wrapping_add(gi as u64);
        let graph = generate_graph(spec, graph_seed)?;
        for &f in &cfg.feature_dims {
            let inputs = BenchInputs::new(&graph, spec.label(), graph_seed, f, &cfg.aggs, cfg.seed)?;
            reports.extend(bench_interleaved(&inputs, &cfg.strategies, &opts)?);
        }
    }
    Ok(reports)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    graph: &'a str,
    n: usize,
    e: usize,
    #[serde(rename = "F")]
    features: usize,
    strategy: &'static str,
    aggs: String,
    mean_s: f64,
    std_s: f64,
    peak_elems: usize,
    threads: usize,
}

pub fn write_csv<W: Write>(reports: &[BenchReport], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in reports {
        wtr.serialize(CsvRow {
            graph: &r.graph.label,
            n: r.graph.num_nodes,
            e: r.graph.num_edges,
            features: r.features,
            strategy: r.strategy.name(),
            aggs: r.aggs.iter().map(|a| a.name()).collect::<Vec<_>>().join("+"),
            mean_s: r.mean_s,
            std_s: r.std_s,
            peak_elems: r.peak_transient_elems,
            threads: r.threads,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Latency of each strategy relative to plain SpMM for one graph and width.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioSummary {
    pub graph: String,
    pub features: usize,
    pub fused_over_plain: Option<f64>,
    pub ordered_over_plain: Option<f64>,
    pub naive_over_plain: Option<f64>,
}

pub fn summarize(reports: &[BenchReport]) -> Vec<RatioSummary> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in reports {
        let k = (r.graph.label.clone(), r.features);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(graph, features)| {
            let mean = |s: BenchStrategy| {
                reports
                    .iter()
                    .find(|r| r.graph.label == graph && r.features == features && r.strategy == s)
                    .map(|r| r.mean_s)
            };
            let plain = mean(BenchStrategy::PlainSpmm);
            let ratio = |s| Some(mean(s)? / plain?);
            RatioSummary {
                fused_over_plain: ratio(BenchStrategy::FusedWeightedStore),
                ordered_over_plain: ratio(BenchStrategy::FusedOrdered),
                naive_over_plain: ratio(BenchStrategy::Sequential),
                graph,
                features,
            }
        })
        .collect()
}
