use specnet_bench::dataset::{DatasetSource, SbmConfig};
use specnet_bench::experiment::{run_experiment, ExperimentConfig, Manifest};
use specnet_bench::tables::{emit_tables, mass_comparison_csv};
use specnet_core::jge::{Activation, NetworkConfig};

fn toy(ks: Vec<usize>, seeds: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        "toy",
        DatasetSource::Sbm(SbmConfig {
            block_size: 15,
            ..SbmConfig::default()
        }),
    );
    c.ks = ks;
    c.seeds = (0..seeds).collect();
    c.train.epochs = 4;
    c.train.net = NetworkConfig::uniform(2, 8, 8, Activation::Tanh, false);
    c.modularity_seeds = vec![0];
    c
}

#[test]
fn one_cell_gives_original_learned_and_five_baselines() {
    let rows = run_experiment(&toy(vec![2], 1), None).unwrap();
    assert_eq!(rows.len(), 7);
    let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["original", "specnet", "rus", "ss", "ksj", "ksct", "dspar"]);
    assert!(rows.iter().all(|r| r.error.is_none()), "{rows:#?}");
    let budget = rows[1].metrics.as_ref().unwrap().n_edges;
    assert!(rows[2..].iter().all(|r| r.metrics.as_ref().unwrap().n_edges == budget));
}

#[test]
fn row_count_scales_with_cells() {
    let rows = run_experiment(&toy(vec![2, 4], 3), None).unwrap();
    assert_eq!(rows.len(), 1 + 2 * 3 * 6);
}

#[test]
fn tables_and_manifest_are_written_and_replayable() {
    let config = toy(vec![2], 2);
    let rows = run_experiment(&config, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest::new(vec![config], &rows);
    let files = emit_tables(&rows, &manifest, dir.path()).unwrap();
    assert_eq!(files.len(), 5);
    let loaded = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded, manifest);
    let replayed = loaded.replay_cell("toy", 2, 1).unwrap();
    let recorded: Vec<_> = rows.iter().filter(|r| r.seed == Some(1)).collect();
    assert_eq!(replayed.len(), recorded.len());
    assert!(replayed.iter().zip(recorded).all(|(a, b)| a.same_result(b)));

    let mass = mass_comparison_csv(&rows);
    // one line per method at k = 2, each over both seeds
    assert_eq!(mass.lines().count(), 1 + 6);
    assert!(mass.lines().skip(1).all(|l| l.split(',').nth(3) == Some("2")));
}

#[test]
fn emitting_nothing_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest::new(vec![], &[]);
    assert!(emit_tables(&[], &manifest, dir.path()).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = toy(vec![], 1);
    assert!(run_experiment(&c, None).is_err());
    c.ks = vec![2];
    c.seeds.clear();
    assert!(run_experiment(&c, None).is_err());
    let missing = ExperimentConfig::new(
        "missing",
        DatasetSource::Files {
            edges: "/nonexistent/e.txt".into(),
            features: "/nonexistent/x.bin".into(),
        },
    );
    assert!(run_experiment(&missing, None).is_err());
}
