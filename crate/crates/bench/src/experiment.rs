//! Experiment driver: for each (k, seed) cell, train the node sparsifier,
//! measure its output, then run every baseline at the matched edge budget.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use specnet_core::baselines::{match_budget, sparsify, Method};
use specnet_core::graph::induced_subgraph;
use specnet_core::head::remove_isolated;
use specnet_core::io::write_mask;
use specnet_core::metrics::MetricsRow;
use specnet_core::trainer::{TrainConfig, Trainer};
use specnet_core::{FeatureMatrix, Graph};

use crate::dataset::{load_dataset, DatasetSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset label used in result rows.
    pub name: String,
    pub source: DatasetSource,
    /// Overrides the edge-list header when set.
    pub directed: Option<bool>,
    /// Numbers of preserved eigenvalues.
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Base training configuration; `seed` and the loss `k`s are set per cell.
    pub train: TrainConfig,
    /// Louvain seeds averaged for the original graph's modularity.
    pub modularity_seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, source: DatasetSource) -> Self {
        Self {
            name: name.into(),
            source,
            directed: None,
            ks: vec![2, 4, 8, 16, 32],
            seeds: (0..3).collect(),
            train: TrainConfig::default(),
            modularity_seeds: (0..5).collect(),
            methods: Method::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err("k values must be positive and non-empty".into());
        }
        if self.seeds.is_empty() {
            return Err("at least one seed is required".into());
        }
        if let DatasetSource::Files { edges, features } = &self.source {
            for p in [edges, features] {
                if !p.exists() {
                    return Err(format!("{} does not exist", p.display()));
                }
            }
        }
        self.train.validate().map_err(|e| e.to_string())
    }

    /// Training configuration of one cell.
    pub fn cell_config(&self, k: usize, seed: u64, features: usize) -> TrainConfig {
        TrainConfig {
            seed,
            loss: self.train.loss.with_k(k, features),
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    /// `original`, `specnet` or a baseline name.
    pub method: String,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub metrics: Option<MetricsRow>,
    /// Nodes kept by the learned mask (specnet rows only).
    pub kept_nodes: Option<usize>,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

impl ResultRow {
    fn new(dataset: &str, method: &str, k: Option<usize>, seed: Option<u64>) -> Self {
        Self {
            dataset: dataset.to_string(),
            method: method.to_string(),
            k,
            seed,
            metrics: None,
            kept_nodes: None,
            wall_seconds: 0.0,
            error: None,
        }
    }

    /// Equality ignoring wall-clock time.
    pub fn same_result(&self, other: &ResultRow) -> bool {
        ResultRow {
            wall_seconds: 0.0,
            ..self.clone()
        } == ResultRow {
            wall_seconds: 0.0,
            ..other.clone()
        }
    }
}

/// Metrics of the unmodified graph.
pub fn original_row(config: &ExperimentConfig, g: &Graph) -> ResultRow {
    let start = Instant::now();
    let mut row = ResultRow::new(&config.name, "original", None, None);
    match MetricsRow::compute(g, None, &config.modularity_seeds) {
        Ok(m) => row.metrics = Some(m),
        Err(e) => row.error = Some(e.to_string()),
    }
    row.wall_seconds = start.elapsed().as_secs_f64();
    row
}

/// Rows of one (k, seed) cell: the learned sparsifier followed by each
/// baseline. When `log_dir` is set the run log and mask are written there.
pub fn run_cell(
    config: &ExperimentConfig,
    g: &Graph,
    x: &FeatureMatrix,
    k: usize,
    seed: u64,
    log_dir: Option<&Path>,
) -> Vec<ResultRow> {
    let start = Instant::now();
    let mut learned = ResultRow::new(&config.name, "specnet", Some(k), Some(seed));
    let sparsified = match train_and_sparsify(config, g, x, k, seed, log_dir) {
        Ok((sub, kept)) => {
            learned.kept_nodes = Some(kept);
            match MetricsRow::compute(&sub, Some(g), &[seed]) {
                Ok(m) => learned.metrics = Some(m),
                Err(e) => learned.error = Some(e.to_string()),
            }
            Some(sub)
        }
        Err(e) => {
            learned.error = Some(e);
            None
        }
    };
    learned.wall_seconds = start.elapsed().as_secs_f64();

    let mut rows = vec![learned];
    for &method in &config.methods {
        let start = Instant::now();
        let mut row = ResultRow::new(&config.name, method.name(), Some(k), Some(seed));
        match &sparsified {
            None => row.error = Some("no budget: learned sparsifier failed".into()),
            Some(sub) => {
                let result = sparsify(method, g, match_budget(sub), seed)
                    .and_then(|b| MetricsRow::compute(&b, Some(g), &[seed]));
                match result {
                    Ok(m) => row.metrics = Some(m),
                    Err(e) => row.error = Some(e.to_string()),
                }
            }
        }
        row.wall_seconds = start.elapsed().as_secs_f64();
        rows.push(row);
    }
    rows
}

/// Train, harden the noise-free mask, drop isolated survivors and return the
/// kept subgraph on the original node set with the kept-node count.
fn train_and_sparsify(
    config: &ExperimentConfig,
    g: &Graph,
    x: &FeatureMatrix,
    k: usize,
    seed: u64,
    log_dir: Option<&Path>,
) -> Result<(Graph, usize), String> {
    let train = config.cell_config(k, seed, x.f());
    let trainer = Trainer::new(g, x, train).map_err(|e| e.to_string())?;
    let stem = log_dir.map(|d| d.join(format!("{}_k{k}_s{seed}", config.name)));
    let checkpoint = stem.as_ref().map(|s| s.with_extension("bin"));
    let outcome = trainer.run(checkpoint.as_deref()).map_err(|e| e.to_string())?;
    let hard = outcome.mask.hard.clone().expect("evaluation masks are hardened");
    let sub = induced_subgraph(g, x, &hard).map_err(|e| e.to_string())?;
    let sub = remove_isolated(&sub);
    if let Some(stem) = stem {
        let write = || -> Result<(), specnet_core::Error> {
            outcome
                .log
                .write_jsonl(BufWriter::new(File::create(stem.with_extension("jsonl"))?))?;
            write_mask(&sub.mask(), BufWriter::new(File::create(stem.with_extension("mask"))?))
        };
        write().map_err(|e| e.to_string())?;
    }
    Ok((sub.full_size_graph(), sub.kept.len()))
}

/// All rows of an experiment: the original graph once, then every cell.
/// Failures are recorded in the rows and do not stop other cells.
pub fn run_experiment(config: &ExperimentConfig, log_dir: Option<&Path>) -> Result<Vec<ResultRow>, String> {
    config.validate()?;
    let (g, x) = load_dataset(&config.source, config.directed).map_err(|e| e.to_string())?;
    if let Some(d) = log_dir {
        fs::create_dir_all(d).map_err(|e| format!("{}: {e}", d.display()))?;
    }
    let cells: Vec<(usize, u64)> = config
        .ks
        .iter()
        .flat_map(|&k| config.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let mut rows = vec![original_row(config, &g)];
    let per_cell: Vec<Vec<ResultRow>> = cells
        .par_iter()
        .map(|&(k, seed)| {
            log::info!("{}: k={k} seed={seed}", config.name);
            run_cell(config, &g, &x, k, seed, log_dir)
        })
        .collect();
    rows.extend(per_cell.into_iter().flatten());
    Ok(rows)
}

/// Everything needed to reproduce a set of result rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub experiments: Vec<ExperimentConfig>,
    pub rows: usize,
    pub failed_cells: usize,
}

impl Manifest {
    pub fn new(experiments: Vec<ExperimentConfig>, rows: &[ResultRow]) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiments,
            rows: rows.len(),
            failed_cells: rows.iter().filter(|r| r.error.is_some()).count(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<(), String> {
        let text = serde_json::to_string_pretty(self).map_err(|e| e.to_string())?;
        fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Re-run one cell of a recorded experiment.
    pub fn replay_cell(&self, dataset: &str, k: usize, seed: u64) -> Result<Vec<ResultRow>, String> {
        let config = self
            .experiments
            .iter()
            .find(|c| c.name == dataset)
            .ok_or_else(|| format!("no experiment named {dataset:?} in manifest"))?;
        let (g, x) = load_dataset(&config.source, config.directed).map_err(|e| e.to_string())?;
        Ok(run_cell(config, &g, &x, k, seed, None))
    }
}

/// Default output root: `$SPECNET_OUT` or `./results`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("SPECNET_OUT").map_or_else(|| PathBuf::from("results"), PathBuf::from)
}
