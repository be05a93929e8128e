//! Acceptance gate: one test per criterion.
//!
//! Dataset criteria read `<data>/<name>/edges.txt` and `features.bin`, where
//! `<data>` is `$SPECNET_DATA` or the workspace `data/` directory. Produce
//! them with `scripts/fetch_datasets.py` followed by `specnet ingest`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specnet_bench::dataset::{load_dataset, DatasetSource, SbmConfig};
use specnet_bench::experiment::{run_experiment, ExperimentConfig, Manifest};
use specnet_core::autodiff::grad_check;
use specnet_core::baselines::Method;
use specnet_core::graph::laplacian;
use specnet_core::jge::{degree_normalizers, normalize, Activation, NetworkConfig};
use specnet_core::loss::{LossConfig, SpectralTargets};
use specnet_core::metrics::{degree_stats, epidemic_threshold, lcc_size, mass, modularity_louvain};
use specnet_core::spectral::{effective_resistances, operator_norm};
use specnet_core::trainer::{Model, TrainConfig, Trainer};
use specnet_core::{FeatureMatrix, Graph};

fn data_root() -> PathBuf {
    std::env::var_os("SPECNET_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn source(name: &str) -> DatasetSource {
    let dir = data_root().join(name);
    DatasetSource::Files {
        edges: dir.join("edges.txt"),
        features: dir.join("features.bin"),
    }
}

fn load(name: &str) -> Result<(Graph, FeatureMatrix), String> {
    load_dataset(&source(name), None).map_err(|e| {
        format!(
            "{name}: {e} (run scripts/fetch_datasets.py and `specnet ingest` into {})",
            data_root().display()
        )
    })
}

/// Collects failed checks so every part of a criterion is reported.
#[derive(Default)]
struct Verdict(Vec<String>);

impl Verdict {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.0.push(what.into());
        }
    }

    fn within(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        self.check(
            (value - target).abs() <= tol,
            format!("{label} = {value}, expected {target} ± {tol}"),
        );
    }

    fn deadline(&mut self, label: &str, start: Instant, limit: Duration) {
        let took = start.elapsed();
        self.check(took < limit, format!("{label} took {took:?}, limit {limit:?}"));
    }

    fn finish(self) {
        assert!(self.0.is_empty(), "\n  {}", self.0.join("\n  "));
    }
}

struct Parity {
    name: &'static str,
    m: usize,
    lcc: usize,
    k_bar: f64,
    k_in_out: Option<f64>,
    tau_c: f64,
    modularity: f64,
}

const PARITY: [Parity; 2] = [
    Parity {
        name: "cora",
        m: 5429,
        lcc: 2485,
        k_bar: 4.01,
        k_in_out: Some(2.00),
        tau_c: 0.07,
        modularity: 0.82,
    },
    Parity {
        name: "citeseer",
        m: 4591,
        lcc: 2110,
        k_bar: 2.77,
        k_in_out: None,
        tau_c: 0.07,
        modularity: 0.89,
    },
];

#[test]
fn criterion_01_original_graph_metric_parity() {
    let mut v = Verdict::default();
    for p in &PARITY {
        let start = Instant::now();
        let g = match load(p.name) {
            Ok((g, _)) => g,
            Err(e) => {
                v.check(false, e);
                continue;
            }
        };
        v.check(g.m() == p.m, format!("{}: m = {}, expected {}", p.name, g.m(), p.m));
        let lcc = lcc_size(&g);
        v.check(lcc == p.lcc, format!("{}: n_LCC = {lcc}, expected {}", p.name, p.lcc));
        let d = degree_stats(&g).unwrap();
        v.within(&format!("{}: k_bar", p.name), d.k_bar, p.k_bar, 0.01);
        if let Some(k) = p.k_in_out {
            v.within(
                &format!("{}: k_in_bar", p.name),
                d.k_in_bar.unwrap_or(f64::NAN),
                k,
                0.01,
            );
            v.within(
                &format!("{}: k_out_bar", p.name),
                d.k_out_bar.unwrap_or(f64::NAN),
                k,
                0.01,
            );
        }
        v.within(
            &format!("{}: tau_c", p.name),
            epidemic_threshold(&g).unwrap(),
            p.tau_c,
            0.005,
        );
        v.deadline(p.name, start, Duration::from_secs(60));
    }
    v.finish();
}

#[test]
fn criterion_02_modularity_parity() {
    let mut v = Verdict::default();
    for p in &PARITY {
        let start = Instant::now();
        let g = match load(p.name) {
            Ok((g, _)) => g,
            Err(e) => {
                v.check(false, e);
                continue;
            }
        };
        let runs: Vec<f64> = (0..5).map(|s| modularity_louvain(&g, s).unwrap()).collect();
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        v.within(
            &format!("{}: mean Louvain modularity", p.name),
            mean,
            p.modularity,
            0.03,
        );
        v.deadline(p.name, start, Duration::from_secs(120));
    }
    v.finish();
}

/// Largest singular value by power iteration on MᵀM, independent of the
/// library's eigensolver.
fn power_norm(m: &Array2<f64>) -> f64 {
    let mut x = Array2::from_elem((m.ncols(), 1), 1.0);
    let mut sigma = 0.0;
    for _ in 0..2000 {
        let y = m.t().dot(&m.dot(&x));
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        sigma = norm.sqrt();
        x = y / norm;
    }
    sigma
}

#[test]
fn criterion_03_normalized_operator_is_non_expansive() {
    let mut v = Verdict::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let (r, c) = (rng.random_range(5..=50), rng.random_range(5..=50));
        let q = Array2::from_shape_simple_fn((r, c), || rng.random_range(-5.0..=5.0));
        let (u, w) = degree_normalizers(&q, None);
        let nq = normalize(&q, &u, &w);
        let norm = operator_norm(&nq);
        v.check(norm <= 1.0 + 1e-10, format!("trial {trial} ({r}x{c}): ‖UQV‖ = {norm}"));
        let oracle = power_norm(&nq);
        v.check(
            oracle <= norm + 1e-9,
            format!("trial {trial}: power iteration {oracle} exceeds {norm}"),
        );
    }
    v.finish();
}

#[test]
fn criterion_04_directed_laplacian_identity() {
    let mut v = Verdict::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..50 {
        let n = rng.random_range(2..=50);
        let p = rng.random_range(0.02..0.3);
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .filter(|_| rng.random::<f64>() < p)
            .collect();
        let g = Graph::from_edges(n, true, edges).unwrap();
        let mut b = Array2::<f64>::zeros((n, g.m()));
        for (e, &(t, h)) in g.edges().iter().enumerate() {
            b[[t, e]] = 1.0;
            b[[h, e]] = -1.0;
        }
        let oracle = b.dot(&b.t());
        v.check(
            laplacian(&g) == oracle,
            format!("trial {trial}: D − (A + Aᵀ) differs from B·Bᵀ"),
        );
    }
    v.finish();
}

fn random_instance(n: usize, f: usize, directed: bool, seed: u64) -> (Graph, FeatureMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (directed || i < j) && rng.random::<f64>() < 0.3 {
                edges.push((i, j));
            }
        }
    }
    let x = Array2::from_shape_simple_fn((n, f), || rng.random_range(-1.0..1.0));
    (
        Graph::from_edges(n, directed, edges).unwrap(),
        FeatureMatrix::new(x).unwrap(),
    )
}

#[test]
fn criterion_05_gradient_fidelity() {
    let start = Instant::now();
    let mut v = Verdict::default();
    let (g, x) = random_instance(12, 4, true, 5);
    let config = TrainConfig {
        net: NetworkConfig::uniform(2, 3, 3, Activation::Tanh, false),
        loss: LossConfig::default().with_k(4, 4),
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(&g, &x, config).unwrap();
    let model = trainer.init_model();
    let noise = trainer.epoch_noise(0);
    let net = trainer.config.net.clone();
    let params: Vec<Array2<f64>> = model.tensors().into_iter().cloned().collect();
    let end_to_end = grad_check(
        |p| {
            let m = Model::from_tensors(&net, 4, p.to_vec())?;
            let (loss, grads, _) = trainer.loss_and_gradients(&m, 1.0, &noise)?;
            Ok((loss.total, grads.tensors))
        },
        &params,
        1e-6,
        1e-4,
    )
    .unwrap();
    v.check(
        end_to_end.passed,
        format!("end to end: worst relative error {:e}", end_to_end.worst),
    );

    // JGE parameters only, through a fixed linear read-out of (Q, H)
    let ops = specnet_core::jge::GraphOperands::new(&g, &x).unwrap();
    let jge_count = model.jge.tensors().len();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cq = Array2::from_shape_simple_fn((3, 3), || rng.random_range(-1.0..1.0));
    let ch = Array2::from_shape_simple_fn((3, 3), || rng.random_range(-1.0..1.0));
    let jge_only = grad_check(
        |p| {
            let jge = specnet_core::jge::JgeParams::from_tensors(&net, 4, p.to_vec())?;
            let mut tape = specnet_core::autodiff::Tape::new();
            let (q, h) = specnet_core::trainer::record_network(&mut tape, &ops, &net, &jge)?;
            let a = tape.constant_ref(&cq);
            let b = tape.constant_ref(&ch);
            let qa = tape.matmul(q, a)?;
            let hb = tape.matmul(h, b)?;
            let nq = tape.norm2(qa)?;
            let nh = tape.norm2(hb)?;
            let loss = tape.add(nq, nh)?;
            let value = tape.scalar(loss);
            Ok((value, tape.backward(loss)?.tensors))
        },
        &params[..jge_count],
        1e-6,
        1e-6,
    )
    .unwrap();
    v.check(
        jge_only.passed,
        format!("JGE only: worst relative error {:e}", jge_only.worst),
    );
    v.deadline("gradient checks", start, Duration::from_secs(60));
    v.finish();
}

#[test]
fn criterion_06_loss_analytics() {
    let start = Instant::now();
    let mut v = Verdict::default();
    let config = LossConfig::default();
    for p in &PARITY {
        let (g, x) = match load(p.name) {
            Ok(d) => d,
            Err(e) => {
                v.check(false, e);
                continue;
            }
        };
        let targets = SpectralTargets::new(&g, &x, config.with_k(8, x.f())).unwrap();
        let full = targets.evaluate(&vec![1.0; g.n()]).unwrap();
        v.check(
            full.combined == 0.0,
            format!("{}: identity mask gives SC = {:e}", p.name, full.combined),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..1000 {
            // alternate relaxed and binary masks
            let z: Vec<f64> = if trial % 2 == 0 {
                (0..g.n()).map(|_| rng.random::<f64>()).collect()
            } else {
                (0..g.n()).map(|_| f64::from(rng.random::<bool>())).collect()
            };
            let b = targets.evaluate(&z).unwrap();
            v.check(
                (0.0..1.0 + config.beta).contains(&b.combined),
                format!("{} mask {trial}: combined = {}", p.name, b.combined),
            );
            v.check(
                (0.0..=config.lambda).contains(&b.trace_term),
                format!("{} mask {trial}: trace term = {}", p.name, b.trace_term),
            );
        }
    }
    v.deadline("loss analytics", start, Duration::from_secs(300));
    v.finish();
}

#[test]
fn criterion_07_mass_endpoints_and_triangle() {
    let mut v = Verdict::default();
    let triangle = Graph::from_edges(3, false, [(0, 1), (1, 2), (0, 2)]).unwrap();
    let minus_one = triangle.with_edges([(0, 1), (1, 2)]).unwrap();
    let none = triangle.with_edges([]).unwrap();
    v.within("MASS(no removal)", mass(&triangle, &triangle).unwrap(), 1.0, 1e-9);
    v.within("MASS(full removal)", mass(&triangle, &none).unwrap(), 0.0, 1e-9);
    v.within(
        "MASS(triangle minus one edge)",
        mass(&triangle, &minus_one).unwrap(),
        1.0 / 3.0,
        1e-9,
    );
    let (sbm, _) = specnet_bench::dataset::sbm(&SbmConfig::default());
    v.within("SBM MASS(no removal)", mass(&sbm, &sbm).unwrap(), 1.0, 1e-9);
    v.within(
        "SBM MASS(full removal)",
        mass(&sbm, &sbm.with_edges([]).unwrap()).unwrap(),
        0.0,
        1e-9,
    );
    v.finish();
}

#[test]
fn criterion_08_effective_resistance() {
    let mut v = Verdict::default();
    let triangle = Graph::from_edges(3, false, [(0, 1), (1, 2), (0, 2)]).unwrap();
    for (e, w) in effective_resistances(&triangle).into_iter().enumerate() {
        v.within(&format!("triangle edge {e}"), w, 2.0 / 3.0, 1e-9);
    }
    let tree = Graph::from_edges(7, false, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (5, 6)]).unwrap();
    for (e, w) in effective_resistances(&tree).into_iter().enumerate() {
        v.check(w == 1.0, format!("tree edge {e}: ω = {w}, expected exactly 1"));
    }
    v.finish();
}

#[test]
fn criterion_09_training_trend_on_sbm() {
    let start = Instant::now();
    let mut v = Verdict::default();
    let (g, x) = specnet_bench::dataset::sbm(&SbmConfig::default());
    let mut mean_kept = Vec::new();
    for lambda in [0.1, 0.5, 1.0] {
        let mut kept = 0.0;
        let mut decreasing = 0;
        for seed in 0..3 {
            let mut config = TrainConfig {
                epochs: 300,
                seed,
                ..TrainConfig::default()
            };
            config.loss.lambda = lambda;
            let outcome = Trainer::new(&g, &x, config).unwrap().run(None).unwrap();
            kept += outcome.log.final_kept as f64 / 3.0;
            let epochs = &outcome.log.epochs;
            if epochs.last().unwrap().loss.total < epochs[0].loss.total {
                decreasing += 1;
            }
        }
        v.check(
            decreasing >= 2,
            format!("λ = {lambda}: total loss decreased in {decreasing}/3 seeds"),
        );
        mean_kept.push(kept);
    }
    v.check(
        mean_kept.windows(2).all(|w| w[1] <= w[0]),
        format!("mean kept nodes for λ = 0.1, 0.5, 1.0: {mean_kept:?}"),
    );
    v.deadline("training trend", start, Duration::from_secs(600));
    v.finish();
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[test]
fn criterion_10_beats_random_sampling_on_cora() {
    let start = Instant::now();
    let mut v = Verdict::default();
    if let Err(e) = load("cora") {
        v.check(false, e);
        v.finish();
        return;
    }
    let mut config = ExperimentConfig::new("cora", source("cora"));
    config.ks = vec![8];
    config.seeds = vec![0, 1, 2];
    config.methods = vec![Method::Rus];
    let rows = run_experiment(&config, None).unwrap();
    let mass_of = |method: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.metrics.as_ref().and_then(|m| m.mass))
            .collect()
    };
    let (learned, random) = (mass_of("specnet"), mass_of("rus"));
    v.check(
        learned.len() == 3 && random.len() == 3,
        format!("missing MASS values: {rows:#?}"),
    );
    let (ml, mr) = (mean(&learned), mean(&random));
    v.check(
        ml >= 0.65,
        format!("learned mean MASS {ml:.4} ({learned:?}) below 0.65"),
    );
    v.check(ml > mr, format!("learned mean MASS {ml:.4} not above RUS {mr:.4}"));
    eprintln!("cora k=8: learned MASS {learned:?}, RUS MASS {random:?}");
    v.deadline("cora comparison", start, Duration::from_secs(1800));
    v.finish();
}

#[test]
fn criterion_11_manifest_replay_is_bit_identical() {
    let mut v = Verdict::default();
    let mut config = ExperimentConfig::new("sbm", DatasetSource::Sbm(SbmConfig::default()));
    config.ks = vec![4];
    config.seeds = vec![7];
    let rows = run_experiment(&config, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    Manifest::new(vec![config], &rows).save(&path).unwrap();
    let replayed = Manifest::load(&path).unwrap().replay_cell("sbm", 4, 7).unwrap();
    let recorded: Vec<_> = rows.iter().filter(|r| r.k == Some(4)).collect();
    v.check(replayed.len() == recorded.len(), "row count differs on replay");
    for (a, b) in replayed.iter().zip(recorded) {
        let bits = |r: &specnet_bench::experiment::ResultRow| {
            r.metrics
                .as_ref()
                .map(|m| m.values().iter().map(|x| x.map(f64::to_bits)).collect::<Vec<_>>())
        };
        v.check(
            a.same_result(b) && bits(a) == bits(b),
            format!("{} row differs on replay", a.method),
        );
    }
    v.finish();
}
