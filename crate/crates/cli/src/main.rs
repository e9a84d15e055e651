//! `egc`: convert graphs, run inference, train toy models, check gradients
//! and benchmark the kernels.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 when a
//! computation fails numerically (divergence or a failed gradient check).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use egc_core::bench::{bench_suite, summarize, write_csv, BenchConfig};
use egc_core::graph::io::{load_csr, parse_edge_list, save_csr, CSR_MAGIC};
use egc_core::layers::{load_checkpoint, load_features, save_checkpoint, save_features, WeightActivation};
use egc_core::training::{
    gradient_check, make_toy_task, train_loop, write_metrics_csv, CheckLayer, GradCheckOptions, TaskKind,
    TrainConfig,
};
use egc_core::{Aggregator, CsrGraph, EgcError, ExecOptions};

#[derive(Parser, Debug)]
#[command(name = "egc", version, about = "Efficient graph convolution engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a text edge list into a binary CSR file.
    Convert {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a checkpointed model over a feature file.
    Infer {
        /// Binary CSR or text edge list. Graphs without coefficients are
        /// normalized (self-loops plus symmetric coefficients).
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Train on a synthetic task; writes a metrics CSV and a checkpoint.
    Train(TrainArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the kernels over a JSON sweep and write a CSV report.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `threads` in the config.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    bases: usize,
    /// Comma-separated aggregators, e.g. `sum,max,min`.
    #[arg(long, default_value = "symnorm", value_parser = parse_aggs)]
    aggs: AggList,
    #[arg(long, value_enum, default_value_t = Activation::Identity)]
    activation: Activation,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_task, default_value = "community")]
    task: TaskKind,
    #[arg(long, default_value_t = 100)]
    nodes: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    layers: u8,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Metrics CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Final checkpoint path.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write the task's node features here.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Also write the task's graph here as binary CSR.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = LayerKind::EgcM)]
    layer: LayerKind,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    bases: usize,
    #[arg(long, default_value = "sum,max,min", value_parser = parse_aggs)]
    aggs: AggList,
    #[arg(long, value_enum, default_value_t = Activation::Identity)]
    activation: Activation,
    /// Output width of the checked layer.
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Check one multi-aggregator layer per aggregator instead.
    #[arg(long)]
    sweep: bool,
    /// Test hook: perturb the analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayerKind {
    EgcS,
    EgcM,
    Gcn,
    Gin,
    REgc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Activation {
    Identity,
    Softmax,
    Sigmoid,
    Hardtanh,
}

impl From<Activation> for WeightActivation {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Identity => WeightActivation::Identity,
            Activation::Softmax => WeightActivation::Softmax,
            Activation::Sigmoid => WeightActivation::Sigmoid,
            Activation::Hardtanh => WeightActivation::Hardtanh,
        }
    }
}

#[derive(Clone, Debug)]
struct AggList(Vec<Aggregator>);

fn parse_aggs(s: &str) -> std::result::Result<AggList, String> {
    let aggs = egc_core::kernels::parse_aggregators(s).map_err(|e| e.to_string())?;
    if aggs.is_empty() {
        return Err("at least one aggregator is required".into());
    }
    Ok(AggList(aggs))
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    s.parse().map_err(|e: EgcError| e.to_string())
}

/// A computation that ran but produced an unusable result.
#[derive(Debug)]
struct NumericalFailure(String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NumericalFailure>().is_some() {
        return 2;
    }
    match err.downcast_ref::<EgcError>() {
        Some(EgcError::Diverged { .. }) | Some(EgcError::NonFinite(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Convert { graph, out } => convert(&graph, &out),
        Command::Infer {
            graph,
            checkpoint,
            features,
            out,
            threads,
        } => infer(&graph, &checkpoint, &features, &out, threads),
        Command::Train(args) => train(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::Bench { config, out, threads } => bench(&config, &out, threads),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} file {} does not exist", path.display());
    }
    Ok(())
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory {} does not exist", dir.display())
        }
        _ => Ok(()),
    }
}

fn is_binary_csr(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path)?;
    let mut read = 0;
    while read < 4 {
        match f.read(&mut magic[read..])? {
            0 => break,
            k => read += k,
        }
    }
    Ok(read == 4 && &magic == CSR_MAGIC)
}

fn load_graph(path: &Path) -> Result<CsrGraph> {
    let ctx = || format!("graph {}", path.display());
    if is_binary_csr(path).with_context(ctx)? {
        return load_csr(path).with_context(ctx);
    }
    let text = std::fs::read(path).with_context(ctx)?;
    let (n, edges) = parse_edge_list(text.as_slice()).with_context(ctx)?;
    CsrGraph::from_edges(&edges, n).with_context(ctx)
}

fn convert(input: &Path, out: &Path) -> Result<()> {
    require_file(input, "graph")?;
    require_parent(out)?;
    let text = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let (n, edges) = parse_edge_list(text.as_slice()).with_context(|| format!("parsing {}", input.display()))?;
    let g = CsrGraph::from_edges(&edges, n)?;
    save_csr(&g, out).with_context(|| format!("writing {}", out.display()))?;
    println!("n={} e={}", g.num_nodes(), g.num_edges());
    Ok(())
}

fn infer(graph: &Path, checkpoint: &Path, features: &Path, out: &Path, threads: usize) -> Result<()> {
    require_file(graph, "graph")?;
    require_file(checkpoint, "checkpoint")?;
    require_file(features, "features")?;
    require_parent(out)?;
    let mut g = load_graph(graph)?;
    if g.coeff().is_none() {
        g = g.normalized();
    }
    let model = load_checkpoint(checkpoint).with_context(|| format!("checkpoint {}", checkpoint.display()))?;
    let x = load_features(features).with_context(|| format!("features {}", features.display()))?;
    if x.rows() != g.num_nodes() {
        bail!(
            "features {} has {} rows but graph {} has {} nodes",
            features.display(),
            x.rows(),
            graph.display(),
            g.num_nodes()
        );
    }
    if x.cols() != model.in_dim() {
        bail!(
            "checkpoint {} expects {} input features but features {} has {}",
            checkpoint.display(),
            model.in_dim(),
            features.display(),
            x.cols()
        );
    }
    let y = model.forward(&g, &x, &ExecOptions::with_threads(threads))?;
    save_features(&y, out).with_context(|| format!("writing {}", out.display()))?;
    println!("n={} out_dim={}", y.rows(), y.cols());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    require_parent(&args.out)?;
    require_parent(&args.checkpoint)?;
    for p in [&args.features, &args.graph].into_iter().flatten() {
        require_parent(p)?;
    }
    let task = make_toy_task(args.task, args.nodes, args.seed)?;
    let cfg = TrainConfig {
        hidden: args.hidden,
        num_layers: args.layers as usize,
        heads: args.model.heads,
        bases: args.model.bases,
        aggs: args.model.aggs.0,
        activation: args.model.activation.into(),
        steps: args.steps,
        lr: args.lr,
        seed: args.seed,
        threads: args.threads,
    };
    let outcome = train_loop(&task, &cfg)?;
    let mut w = BufWriter::new(File::create(&args.out).with_context(|| format!("writing {}", args.out.display()))?);
    write_metrics_csv(&outcome.history, &mut w)?;
    w.flush()?;
    save_checkpoint(&outcome.model, &args.checkpoint)
        .with_context(|| format!("writing {}", args.checkpoint.display()))?;
    if let Some(p) = &args.features {
        save_features(&task.features, p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.graph {
        save_csr(&task.graph, p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(d) = outcome.divergence {
        return Err(NumericalFailure(d.to_error().to_string()).into());
    }
    let last = outcome.final_metrics().expect("history has the initial row");
    print!("task={} steps={} initial_loss={:.6} final_loss={:.6}", task.kind, last.step, outcome.initial_loss(), last.loss);
    match last.accuracy {
        Some(a) => println!(" train_accuracy={a:.4}"),
        None => println!(),
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let opts = GradCheckOptions {
        heads: args.heads,
        bases: args.bases,
        out_dim: args.hidden,
        h: args.step,
        activation: args.activation.into(),
        corrupt_backward: args.corrupt_backward,
        ..GradCheckOptions::default()
    };
    let layers: Vec<CheckLayer> = if args.sweep {
        Aggregator::ALL.iter().map(|&a| CheckLayer::EgcM(vec![a])).collect()
    } else {
        vec![match args.layer {
            LayerKind::EgcS => CheckLayer::EgcS,
            LayerKind::EgcM => CheckLayer::EgcM(args.aggs.0),
            LayerKind::Gcn => CheckLayer::Gcn,
            LayerKind::Gin => CheckLayer::Gin,
            LayerKind::REgc => CheckLayer::REgc,
        }]
    };
    let mut failed = Vec::new();
    for layer in &layers {
        let report = gradient_check(layer, args.seed, &opts)?;
        let worst = report.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {} max_rel_err={worst:.3e} resamples={}", report.layer, report.resamples);
        for g in &report.groups {
            println!(
                "  {:<10} max_rel_err={:.3e} max_abs_err={:.3e}",
                g.name, g.max_rel_err, g.max_abs_err
            );
        }
        if !report.passed() {
            failed.push(report.layer);
        }
    }
    if !failed.is_empty() {
        return Err(NumericalFailure(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(())
}

fn bench(config: &Path, out: &Path, threads: Option<usize>) -> Result<()> {
    require_file(config, "config")?;
    require_parent(out)?;
    let mut cfg = BenchConfig::load(config).with_context(|| format!("config {}", config.display()))?;
    if let Some(t) = threads {
        cfg.threads = t;
        cfg.validate()?;
    }
    let reports = bench_suite(&cfg)?;
    write_csv(&reports, File::create(out).with_context(|| format!("writing {}", out.display()))?)?;
    let fmt = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.3}"));
    for s in summarize(&reports) {
        println!(
            "{} F={}: fused/plain={} ordered/plain={} naive/plain={}",
            s.graph,
            s.features,
            fmt(s.fused_over_plain),
            fmt(s.ordered_over_plain),
            fmt(s.naive_over_plain)
        );
    }
    Ok(())
}
