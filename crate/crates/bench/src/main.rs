use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use specnet_bench::dataset::{load_dataset, read_linqs, DatasetSource, SbmConfig};
use specnet_bench::experiment::{default_out_dir, run_experiment, ExperimentConfig, Manifest};
use specnet_bench::tables::emit_tables;
use specnet_core::baselines::{sparsify, Method};
use specnet_core::checkpoint::Checkpoint;
use specnet_core::graph::induced_subgraph;
use specnet_core::head::{evaluation_mask, remove_isolated, MaskSummary};
use specnet_core::io::{read_edge_list, save_edge_list, save_features, write_mask};
use specnet_core::jge::{Activation, NetworkConfig};
use specnet_core::loss::LossConfig;
use specnet_core::metrics::MetricsRow;
use specnet_core::trainer::{Model, TrainConfig, Trainer};
use specnet_core::{FeatureMatrix, Graph};

#[derive(Parser)]
#[command(
    name = "specnet",
    version,
    about = "Spectral node sparsification and sparsifier benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw dataset into an edge list and binary feature matrix.
    Ingest(IngestArgs),
    /// Train the node sparsifier on one graph.
    Train(TrainArgs),
    /// Apply a trained checkpoint and write the sparsified graph.
    Sparsify(SparsifyArgs),
    /// Run one edge sparsifier at a fixed budget.
    Baseline(BaselineArgs),
    /// Print the metrics row of a graph.
    Metrics(MetricsArgs),
    /// Run a full comparison sweep and write result tables.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Edge list (`tail head` per line).
    #[arg(long, required_unless_present = "sbm")]
    edges: Option<PathBuf>,
    /// Features, `.bin` or CSV.
    #[arg(long, required_unless_present = "sbm")]
    features: Option<PathBuf>,
    /// Use the built-in two-block SBM instead of files.
    #[arg(long, conflicts_with_all = ["edges", "features"])]
    sbm: bool,
    /// Seed of the SBM draw.
    #[arg(long, default_value_t = 0)]
    sbm_seed: u64,
    /// Treat the graph as directed (overrides the edge-list header).
    #[arg(long)]
    directed: Option<bool>,
}

impl DataArgs {
    fn source(&self) -> DatasetSource {
        if self.sbm {
            DatasetSource::Sbm(SbmConfig {
                seed: self.sbm_seed,
                ..SbmConfig::default()
            })
        } else {
            DatasetSource::Files {
                edges: self.edges.clone().expect("required by clap"),
                features: self.features.clone().expect("required by clap"),
            }
        }
    }

    fn load(&self) -> Result<(Graph, FeatureMatrix)> {
        Ok(load_dataset(&self.source(), self.directed)?)
    }
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
    #[arg(long, default_value_t = 1.0)]
    tau_start: f64,
    #[arg(long, default_value_t = 0.1)]
    tau_end: f64,
    /// Shift of the Laplacian.
    #[arg(long, default_value_t = 1.0)]
    alpha1: f64,
    /// Shift of the feature Gram matrix.
    #[arg(long, default_value_t = 1.0)]
    alpha2: f64,
    /// Weight of the Gram term.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Weight of the kept-node penalty.
    #[arg(long, default_value_t = specnet_core::loss::DEFAULT_LAMBDA)]
    lambda: f64,
    /// Layer count.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Rows of every layer output.
    #[arg(long, default_value_t = 64)]
    rows: usize,
    /// Feature width of every layer output.
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value = "tanh")]
    activation: Activation,
    /// Use the single-matrix symmetric layer (undirected graphs only).
    #[arg(long)]
    light: bool,
}

impl TrainFlags {
    fn config(&self, k: usize, seed: u64, features: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            adam_betas: (self.beta1, self.beta2),
            adam_eps: self.adam_eps,
            seed,
            tau_start: self.tau_start,
            tau_end: self.tau_end,
            loss: LossConfig {
                alpha1: self.alpha1,
                alpha2: self.alpha2,
                beta: self.beta,
                lambda: self.lambda,
                ..LossConfig::default()
            }
            .with_k(k, features),
            net: NetworkConfig::uniform(self.depth, self.rows, self.width, self.activation, self.light),
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    /// LINQS prefix: reads <prefix>.content and <prefix>.cites.
    #[arg(long, conflicts_with_all = ["edges", "features"])]
    linqs: Option<PathBuf>,
    #[arg(long, requires = "features")]
    edges: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    features: Option<PathBuf>,
    /// Keep edge direction.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    directed: bool,
    /// Output directory for edges.txt and features.bin.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Number of preserved eigenvalues.
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default: $SPECNET_OUT or ./results).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SparsifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sparsified edge list to write (original node indices).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    /// rus, ss, ksj, ksct or dspar.
    #[arg(long)]
    method: Method,
    /// Edges to keep.
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    edges: PathBuf,
    /// Original graph, enables MASS.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    directed: Option<bool>,
    /// Louvain seeds to average over.
    #[arg(long, default_value_t = 5)]
    modularity_seeds: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON experiment configs (a list); replaces the dataset flags.
    #[arg(long, conflicts_with_all = ["edges", "features", "sbm"])]
    config: Option<PathBuf>,
    #[arg(long, default_value = "dataset")]
    name: String,
    #[arg(long, required_unless_present_any = ["sbm", "config"])]
    edges: Option<PathBuf>,
    #[arg(long, required_unless_present_any = ["sbm", "config"])]
    features: Option<PathBuf>,
    #[arg(long)]
    sbm: bool,
    #[arg(long)]
    directed: Option<bool>,
    /// Preserved-eigenvalue counts.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    k: Vec<usize>,
    /// Number of seeds (0..n).
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory (default: $SPECNET_OUT or ./results).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| path.display().to_string())?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let (g, x) = if let Some(prefix) = &args.linqs {
        let d = read_linqs(prefix, args.directed)?;
        fs::write(args.out.join("ids.txt"), d.ids.join("\n") + "\n")?;
        fs::write(args.out.join("labels.txt"), d.labels.join("\n") + "\n")?;
        if d.dangling > 0 {
            log::warn!("skipped {} citations with unknown endpoints", d.dangling);
        }
        (d.graph, d.features)
    } else {
        let (Some(edges), Some(features)) = (&args.edges, &args.features) else {
            bail!("pass --linqs or both --edges and --features");
        };
        let source = DatasetSource::Files {
            edges: edges.clone(),
            features: features.clone(),
        };
        load_dataset(&source, Some(args.directed))?
    };
    save_edge_list(&g, args.out.join("edges.txt"))?;
    save_features(&x, args.out.join("features.bin"))?;
    let undirected_pairs = g.symmetrized().m();
    println!(
        "n={} m={} (undirected pairs {undirected_pairs}) f={} directed={}",
        g.n(),
        g.m(),
        x.f(),
        g.is_directed()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let (g, x) = args.data.load()?;
    let config = args.train.config(args.k, args.seed, x.f());
    let out = args.out.unwrap_or_else(default_out_dir);
    fs::create_dir_all(&out)?;
    let trainer = Trainer::new(&g, &x, config.clone())?;
    let outcome = trainer.run(Some(&out.join("model.bin")))?;
    outcome
        .log
        .write_jsonl(BufWriter::new(File::create(out.join("log.jsonl"))?))?;
    let hard = outcome.mask.hard.clone().expect("hardened");
    write_mask(&hard, BufWriter::new(File::create(out.join("mask.txt"))?))?;
    write_json(&out.join("config.json"), &config)?;
    let sub = remove_isolated(&induced_subgraph(&g, &x, &hard)?);
    let full = sub.full_size_graph();
    save_edge_list(&full, out.join("sparsified.txt"))?;
    write_json(
        &out.join("mask.json"),
        &MaskSummary {
            n: g.n(),
            kept: sub.kept.len(),
            temperature: outcome.mask.temperature,
            seed: args.seed,
            isolated_removed: true,
        },
    )?;
    let last = outcome.log.epochs.last().expect("at least one epoch");
    println!(
        "loss {:.6} (laplace {:.4e}, gram {:.4e}, trace {:.4e}); kept {} of {} nodes, {} of {} edges",
        last.loss.total,
        last.loss.laplace,
        last.loss.gram,
        last.loss.trace_term,
        sub.kept.len(),
        g.n(),
        full.m(),
        g.m()
    );
    Ok(())
}

fn sparsify_cmd(args: SparsifyArgs) -> Result<()> {
    let (g, x) = args.data.load()?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let Some(head) = ck.head else {
        bail!("checkpoint has no head weights");
    };
    if ck.n != g.n() || ck.f != x.f() {
        bail!(
            "checkpoint was trained on n={} f={}, data has n={} f={}",
            ck.n,
            ck.f,
            g.n(),
            x.f()
        );
    }
    let config = TrainConfig {
        net: ck.config,
        ..TrainConfig::default()
    };
    // the loss is not evaluated here; k only needs to be valid
    let config = TrainConfig {
        loss: config.loss.with_k(1, x.f()),
        ..config
    };
    let trainer = Trainer::new(&g, &x, config)?;
    let model = Model { jge: ck.jge, head };
    let mask = evaluation_mask(&trainer.logits(&model)?);
    let sub = remove_isolated(&induced_subgraph(&g, &x, mask.hard.as_deref().expect("hardened"))?);
    let full = sub.full_size_graph();
    save_edge_list(&full, &args.out)?;
    println!(
        "kept {} of {} nodes, {} of {} edges",
        sub.kept.len(),
        g.n(),
        full.m(),
        g.m()
    );
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let (g, _) = args.data.load()?;
    let out = sparsify(args.method, &g, args.budget, args.seed)?;
    save_edge_list(&out, &args.out)?;
    println!("{}: kept {} of {} edges", args.method, out.m(), g.m());
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let load = |p: &Path, n: Option<usize>| -> Result<Graph> {
        Ok(read_edge_list(p)
            .with_context(|| p.display().to_string())?
            .into_graph(n, args.directed)?)
    };
    let reference = args.reference.as_deref().map(|p| load(p, None)).transpose()?;
    let g = load(&args.edges, reference.as_ref().map(Graph::n))?;
    let seeds: Vec<u64> = (0..args.modularity_seeds).collect();
    let row = MetricsRow::compute(&g, reference.as_ref(), &seeds)?;
    println!("{}", MetricsRow::HEADER.join(","));
    println!("{}", row.to_csv());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<bool> {
    let experiments: Vec<ExperimentConfig> = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path).with_context(|| path.display().to_string())?)?,
        None => {
            let source = if args.sbm {
                DatasetSource::Sbm(SbmConfig::default())
            } else {
                DatasetSource::Files {
                    edges: args.edges.clone().expect("required by clap"),
                    features: args.features.clone().expect("required by clap"),
                }
            };
            let mut c = ExperimentConfig::new(if args.sbm { "sbm".to_string() } else { args.name.clone() }, source);
            c.directed = args.directed;
            c.ks = args.k.clone();
            c.seeds = (0..args.seeds).collect();
            // k and seed are filled per cell; feature width only clamps k
            c.train = args.train.config(1, 0, usize::MAX);
            vec![c]
        }
    };
    let out = args.out.unwrap_or_else(default_out_dir);
    let mut rows = Vec::new();
    for c in &experiments {
        let r = run_experiment(c, Some(&out.join("runs"))).map_err(anyhow::Error::msg)?;
        rows.extend(r);
    }
    let manifest = Manifest::new(experiments, &rows);
    for path in emit_tables(&rows, &manifest, &out).map_err(anyhow::Error::msg)? {
        println!("wrote {}", path.display());
    }
    let failed: Vec<_> = rows.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!(
            "failed: {} {} k={:?} seed={:?}: {}",
            r.dataset,
            r.method,
            r.k,
            r.seed,
            r.error.as_deref().unwrap_or("")
        );
    }
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Sparsify(a) => sparsify_cmd(a).map(|_| true),
        Command::Baseline(a) => baseline(a).map(|_| true),
        Command::Metrics(a) => metrics(a).map(|_| true),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
