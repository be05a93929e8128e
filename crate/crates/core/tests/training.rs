use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specnet_core::autodiff::{grad_check, Tape};
use specnet_core::jge::{init_params, network_forward, Activation, GraphOperands, JgeParams, NetworkConfig};
use specnet_core::loss::LossConfig;
use specnet_core::trainer::{record_network, Model, TrainConfig, Trainer};
use specnet_core::{FeatureMatrix, Graph};

fn random_instance(n: usize, f: usize, directed: bool, p: f64, seed: u64) -> (Graph, FeatureMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (directed || i < j) && rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let g = Graph::from_edges(n, directed, edges).unwrap();
    let x = Array2::from_shape_simple_fn((n, f), || rng.random_range(-1.0..1.0));
    (g, FeatureMatrix::new(x).unwrap())
}

fn small_config(light: bool) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        net: NetworkConfig::uniform(2, 3, 3, Activation::Tanh, light),
        loss: LossConfig::default().with_k(4, 4),
        ..TrainConfig::default()
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for (directed, light) in [(true, false), (false, false), (false, true)] {
        let (g, x) = random_instance(12, 4, directed, 0.3, 3);
        let trainer = Trainer::new(&g, &x, small_config(light)).unwrap();
        let model = trainer.init_model();
        let noise = trainer.epoch_noise(0);
        let config = trainer.config.net.clone();
        let params: Vec<Array2<f64>> = model.tensors().into_iter().cloned().collect();
        let report = grad_check(
            |p| {
                let m = Model::from_tensors(&config, 4, p.to_vec())?;
                let (loss, grads, _) = trainer.loss_and_gradients(&m, 1.0, &noise)?;
                Ok((loss.total, grads.tensors))
            },
            &params,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "directed={directed} light={light}: {report:?}");
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let (g, x) = random_instance(12, 4, true, 0.3, 5);
    let ops = GraphOperands::new(&g, &x).unwrap();
    let config = NetworkConfig::uniform(2, 3, 3, Activation::Tanh, false);
    let params: Vec<Array2<f64>> = init_params(&config, 4, 2).tensors().into_iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cq = Array2::from_shape_simple_fn((3, 2), || rng.random_range(-1.0..1.0));
    let ch = Array2::from_shape_simple_fn((3, 2), || rng.random_range(-1.0..1.0));
    let report = grad_check(
        |p| {
            let jge = JgeParams::from_tensors(&config, 4, p.to_vec())?;
            let mut tape = Tape::new();
            let (q, h) = record_network(&mut tape, &ops, &config, &jge)?;
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
        &params,
        1e-6,
        1e-6,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn recorded_network_matches_dense_forward() {
    for (directed, light) in [(true, false), (false, true)] {
        let (g, x) = random_instance(10, 3, directed, 0.3, 1);
        let config = NetworkConfig::uniform(3, 4, 5, Activation::Tanh, light);
        let params = init_params(&config, 3, 4);
        let ops = GraphOperands::new(&g, &x).unwrap();
        let mut tape = Tape::new();
        let (q, h) = record_network(&mut tape, &ops, &config, &params).unwrap();
        let dense = network_forward(&g, &x, &params, &config).unwrap();
        for (a, b) in tape.value(q).iter().zip(dense.q.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in tape.value(h).iter().zip(dense.h.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (g, x) = random_instance(12, 4, false, 0.3, 2);
    let trainer = Trainer::new(
        &g,
        &x,
        TrainConfig {
            learning_rate: 0.0,
            ..small_config(false)
        },
    )
    .unwrap();
    let mut model = trainer.init_model();
    let before = model.clone();
    let mut adam = specnet_core::trainer::Adam::new(&model);
    let rec = trainer.train_step(&mut model, &mut adam, 0).unwrap();
    assert!(rec.loss.total.is_finite());
    assert_eq!(model, before);
}

#[test]
fn one_step_changes_parameters() {
    let (g, x) = random_instance(12, 4, true, 0.3, 2);
    let trainer = Trainer::new(&g, &x, small_config(false)).unwrap();
    let mut model = trainer.init_model();
    let before = model.clone();
    let mut adam = specnet_core::trainer::Adam::new(&model);
    let rec = trainer.train_step(&mut model, &mut adam, 0).unwrap();
    assert!(rec.loss.total.is_finite());
    assert_ne!(model, before);
}

#[test]
fn runs_are_deterministic_and_write_checkpoints() {
    let (g, x) = random_instance(15, 4, true, 0.25, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let trainer = Trainer::new(&g, &x, small_config(false)).unwrap();
    let a = trainer.run(Some(&path)).unwrap();
    let b = trainer.run(None).unwrap();
    assert!(a.log.same_trajectory(&b.log));
    assert_eq!(a.mask, b.mask);
    assert_eq!(a.model, b.model);
    let ck = specnet_core::checkpoint::Checkpoint::load(&path).unwrap();
    assert_eq!(ck.jge, a.model.jge);
    assert_eq!(ck.head.as_ref(), Some(&a.model.head));
    assert_eq!(a.log.epochs.len(), 20);
    assert!(a.log.epochs.windows(2).all(|w| w[0].epoch + 1 == w[1].epoch));
}

#[test]
fn dominant_penalty_drops_nodes() {
    let (g, x) = random_instance(20, 4, false, 0.3, 4);
    let mut config = small_config(false);
    config.epochs = 100;
    config.loss.lambda = 10.0;
    let out = Trainer::new(&g, &x, config).unwrap().run(None).unwrap();
    assert!(out.mask.kept() < 20, "kept {}", out.mask.kept());
}

#[test]
fn without_penalty_the_full_mask_is_recovered() {
    let (g, x) = random_instance(20, 4, false, 0.3, 4);
    let mut config = small_config(false);
    config.epochs = 300;
    config.loss.lambda = 0.0;
    config.loss.beta = 0.0;
    let out = Trainer::new(&g, &x, config).unwrap().run(None).unwrap();
    let last = out.log.epochs.last().unwrap();
    assert!(last.loss.laplace <= 0.05, "{:?}", last.loss);
}
