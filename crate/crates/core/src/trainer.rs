//! Training loop: network → head → loss on a tape, backward, Adam update,
//! geometric temperature annealing, per-epoch logging and checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, SparsePair, Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::head::{evaluation_mask, sample_noise, HeadParams, Mask};
use crate::jge::{init_params_with, Activation, GraphOperands, JgeParams, NetworkConfig};
use crate::loss::{LossBreakdown, LossConfig, SpectralTargets};

/// Loss or gradient norm above this triggers clipping.
pub const CLIP_TRIGGER: f64 = 1e6;
/// Gradient norm after clipping.
pub const CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub loss: LossConfig,
    pub net: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            tau_start: 1.0,
            tau_end: 0.1,
            loss: LossConfig::default(),
            net: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.adam_betas;
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Parameter("learning rate must be nonnegative".into()));
        }
        if !(0.0 < b1 && b1 < 1.0 && 0.0 < b2 && b2 < 1.0) {
            return Err(Error::Parameter(format!(
                "Adam betas must lie in (0, 1), got {:?}",
                self.adam_betas
            )));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Parameter("Adam epsilon must be positive".into()));
        }
        if !(self.tau_start >= self.tau_end && self.tau_end > 0.0) {
            return Err(Error::Parameter(format!(
                "need tau_start >= tau_end > 0, got {} and {}",
                self.tau_start, self.tau_end
            )));
        }
        Ok(())
    }
}

/// τ(e) = τ_start·(τ_end/τ_start)^{e/(E−1)}
pub fn anneal_temperature(epoch: usize, epochs: usize, tau_start: f64, tau_end: f64) -> f64 {
    if epochs <= 1 {
        return tau_start;
    }
    if epoch + 1 >= epochs {
        return tau_end;
    }
    tau_start * (tau_end / tau_start).powf(epoch as f64 / (epochs - 1) as f64)
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub jge: JgeParams,
    pub head: HeadParams,
}

impl Model {
    /// JGE matrices in layer order, then head weights and bias.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = self.jge.tensors();
        t.push(&self.head.w);
        t.push(&self.head.b);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = self.jge.tensors_mut();
        t.push(&mut self.head.w);
        t.push(&mut self.head.b);
        t
    }

    /// Inverse of [`Model::tensors`].
    pub fn from_tensors(config: &NetworkConfig, f: usize, mut tensors: Vec<Array2<f64>>) -> Result<Self> {
        if tensors.len() < 2 {
            return Err(Error::Shape("model needs head weights and bias".into()));
        }
        let b = tensors.pop().expect("checked");
        let w = tensors.pop().expect("checked");
        if b.dim() != (w.nrows(), 1) || w.ncols() != config.head_input_len(f) {
            return Err(Error::Shape(format!("head W {:?}, b {:?}", w.dim(), b.dim())));
        }
        Ok(Self {
            jge: JgeParams::from_tensors(config, f, tensors)?,
            head: HeadParams { w, b },
        })
    }

    pub fn init(config: &NetworkConfig, n: usize, f: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jge = init_params_with(config, f, &mut rng);
        let head = HeadParams::init(n, config.head_input_len(f), &mut rng);
        Self { jge, head }
    }
}

/// Adam moments, one pair per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Array2<f64>> = model.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    pub fn update(&mut self, params: Vec<&mut Array2<f64>>, grads: &Gradients, lr: f64, betas: (f64, f64), eps: f64) {
        self.steps += 1;
        let (b1, b2) = betas;
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        for (((p, g), m), v) in params.into_iter().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

/// One epoch of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Nodes kept by the noise-free mask at the start of the epoch.
    pub kept: usize,
    pub temperature: f64,
    pub grad_norm: f64,
    pub clipped: bool,
    pub degenerate_clusters: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_kept: usize,
    pub checkpoint: Option<PathBuf>,
}

impl RunLog {
    /// Equality ignoring wall-clock fields.
    pub fn same_trajectory(&self, other: &RunLog) -> bool {
        let strip = |log: &RunLog| -> Vec<EpochRecord> {
            log.epochs
                .iter()
                .map(|e| EpochRecord {
                    wall_ms: 0.0,
                    ..e.clone()
                })
                .collect()
        };
        self.seed == other.seed && self.final_kept == other.final_kept && strip(self) == strip(other)
    }

    /// One JSON object per epoch.
    pub fn write_jsonl(&self, mut w: impl std::io::Write) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub q: Var,
    pub h: Var,
    pub logits: Var,
    pub z: Var,
    pub loss: crate::loss::LossVars,
}

/// Precomputed per-graph state shared by every step of a run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    ops: GraphOperands,
    targets: SpectralTargets,
    n: usize,
    f: usize,
}

/// Final products of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: RunLog,
    /// Noise-free hardened mask of the trained model.
    pub mask: Mask,
}

impl Trainer {
    pub fn new(g: &Graph, x: &FeatureMatrix, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        config.net.validate(g.is_directed())?;
        Ok(Self {
            ops: GraphOperands::new(g, x)?,
            targets: SpectralTargets::new(g, x, config.loss)?,
            n: g.n(),
            f: x.f(),
            config,
        })
    }

    pub fn operands(&self) -> &GraphOperands {
        &self.ops
    }

    pub fn targets(&self) -> &SpectralTargets {
        &self.targets
    }

    pub fn init_model(&self) -> Model {
        Model::init(&self.config.net, self.n, self.f, self.config.seed)
    }

    /// Per-node g¹ − g² for `epoch`, from a stream keyed by (seed, epoch).
    pub fn epoch_noise(&self, epoch: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        sample_noise(self.n, &mut rng)
    }

    /// Record network, head and loss for `model` on `tape`. Parameter slots
    /// follow [`Model::tensors`] order.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, model: &'a Model, tau: f64, noise: &[f64]) -> Result<ForwardVars> {
        let (q, h) = record_network(tape, &self.ops, &self.config.net, &model.jge)?;
        let slot = model.jge.tensors().len();
        let w = tape.param(slot, &model.head.w);
        let b = tape.param(slot + 1, &model.head.b);
        let flat = tape.flatten(&[q, h])?;
        let wx = tape.matmul(w, flat)?;
        let logits = tape.add(wx, b)?;
        let noise = tape.constant(
            Array2::from_shape_vec((noise.len(), 1), noise.to_vec()).map_err(|e| Error::Shape(e.to_string()))?,
        );
        let noisy = tape.add(logits, noise)?;
        let scaled = tape.scale(noisy, 1.0 / tau)?;
        let z = tape.activation(scaled, Activation::Sigmoid)?;
        let loss = self.targets.record(tape, z)?;
        Ok(ForwardVars { q, h, logits, z, loss })
    }

    /// Loss and gradients at `model` with the given temperature and noise.
    pub fn loss_and_gradients(
        &self,
        model: &Model,
        tau: f64,
        noise: &[f64],
    ) -> Result<(LossBreakdown, Gradients, StepInfo)> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, model, tau, noise)?;
        let breakdown = vars.loss.breakdown(&tape);
        let logits = tape.value(vars.logits).column(0).to_vec();
        let grads = tape.backward(vars.loss.total)?;
        Ok((
            breakdown,
            grads,
            StepInfo {
                kept: evaluation_mask(&logits).kept(),
                degenerate_clusters: tape.degenerate_clusters(),
            },
        ))
    }

    /// One forward/backward/update cycle.
    pub fn train_step(&self, model: &mut Model, adam: &mut Adam, epoch: usize) -> Result<EpochRecord> {
        let start = Instant::now();
        let c = &self.config;
        let tau = anneal_temperature(epoch, c.epochs, c.tau_start, c.tau_end);
        let noise = self.epoch_noise(epoch);
        let (breakdown, mut grads, info) = self.loss_and_gradients(model, tau, &noise)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("{breakdown:?}, parameter norms {:?}", tensor_norms(model)),
            });
        }
        let grad_norm = grads.norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("gradient norm {grad_norm}, {breakdown:?}"),
            });
        }
        let clipped = breakdown.total > CLIP_TRIGGER || grad_norm > CLIP_TRIGGER;
        if clipped && grad_norm > CLIP_NORM {
            grads.scale(CLIP_NORM / grad_norm);
        }
        adam.update(model.tensors_mut(), &grads, c.learning_rate, c.adam_betas, c.adam_eps);
        Ok(EpochRecord {
            epoch,
            loss: breakdown,
            kept: info.kept,
            temperature: tau,
            grad_norm,
            clipped,
            degenerate_clusters: info.degenerate_clusters,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Noise-free logits of `model`.
    pub fn logits(&self, model: &Model) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let noise = vec![0.0; self.n];
        let vars = self.record(&mut tape, model, 1.0, &noise)?;
        Ok(tape.value(vars.logits).column(0).to_vec())
    }

    /// Hardened noise-free mask.
    pub fn evaluate_mask(&self, model: &Model) -> Result<Mask> {
        let mut mask = evaluation_mask(&self.logits(model)?);
        mask.temperature = self.config.tau_end;
        Ok(mask)
    }

    /// Full schedule from a fresh initialization.
    pub fn run(&self, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
        let mut model = self.init_model();
        let mut adam = Adam::new(&model);
        let mut epochs = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let rec = self.train_step(&mut model, &mut adam, epoch)?;
            log::debug!(
                "epoch {epoch}: total {:.6} laplace {:.3e} gram {:.3e} kept {}",
                rec.loss.total,
                rec.loss.laplace,
                rec.loss.gram,
                rec.kept
            );
            epochs.push(rec);
        }
        let mask = self.evaluate_mask(&model)?;
        if let Some(path) = checkpoint {
            Checkpoint {
                config: self.config.net.clone(),
                n: self.n,
                f: self.f,
                jge: model.jge.clone(),
                head: Some(model.head.clone()),
            }
            .save(path)?;
        }
        let log = RunLog {
            seed: self.config.seed,
            final_kept: mask.kept(),
            epochs,
            checkpoint: checkpoint.map(Path::to_path_buf),
        };
        Ok(TrainOutcome { model, log, mask })
    }
}

/// Record the layer stack on `tape` with parameter slots in
/// [`JgeParams::tensors`] order. Returns (Q_T, H_T).
pub fn record_network<'a>(
    tape: &mut Tape<'a>,
    ops: &'a GraphOperands,
    net: &NetworkConfig,
    params: &'a JgeParams,
) -> Result<(Var, Var)> {
    if params.layers.len() != net.depth() || net.depth() == 0 {
        return Err(Error::Shape(format!(
            "{} parameter layers for a {}-layer network",
            params.layers.len(),
            net.depth()
        )));
    }
    let mut slot = 0;
    let mut next_param = |tape: &mut Tape<'a>, m: &'a Array2<f64>| {
        let v = tape.param(slot, m);
        slot += 1;
        v
    };
    let light = net.light;
    let xt = SparsePair { m: &ops.xt, mt: &ops.x };
    let s = SparsePair { m: &ops.s, mt: &ops.st };
    let x = SparsePair { m: &ops.x, mt: &ops.xt };

    let mut state: Option<(Var, Var)> = None;
    for (lp, spec) in params.layers.iter().zip(&net.layers) {
        let theta = next_param(tape, &lp.theta);
        let phi_psi = match (&lp.phi, &lp.psi) {
            (Some(phi), Some(psi)) => Some((next_param(tape, phi), next_param(tape, psi))),
            _ => None,
        };
        let j = match state {
            None => {
                let a = tape.sparse_right(theta, xt)?;
                let b = tape.sparse_right(a, s)?;
                tape.sparse_right(b, x)?
            }
            Some((q, h)) => {
                let q = if light {
                    let qt = tape.transpose(q)?;
                    let sum = tape.add(q, qt)?;
                    tape.scale(sum, 0.5)?
                } else {
                    q
                };
                let u = tape.row_normalizer(q)?;
                let v = if light { u } else { tape.col_normalizer(q)? };
                let rows = tape.scale_rows(u, q)?;
                let core = tape.scale_cols(rows, v)?;
                let core_h = tape.matmul(core, h)?;
                let ht = tape.transpose(h)?;
                let bilinear = tape.matmul(ht, core_h)?;
                tape.matmul(theta, bilinear)?
            }
        };
        state = Some(match phi_psi {
            Some((phi, psi)) => {
                let qa = tape.matmul(j, phi)?;
                let ha = tape.matmul(j, psi)?;
                (
                    tape.activation(qa, spec.topology_activation)?,
                    tape.activation(ha, spec.feature_activation)?,
                )
            }
            None => {
                let tt = tape.transpose(theta)?;
                let qa = tape.matmul(j, tt)?;
                (tape.activation(qa, spec.topology_activation)?, j)
            }
        });
    }
    Ok(state.expect("depth checked"))
}

/// Side information from one forward/backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub kept: usize,
    pub degenerate_clusters: usize,
}

fn tensor_norms(model: &Model) -> Vec<f64> {
    model
        .tensors()
        .iter()
        .map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Train on (g, x) and return the model, log and final mask.
pub fn train_run(g: &Graph, x: &FeatureMatrix, config: TrainConfig, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
    Trainer::new(g, x, config)?.run(checkpoint)
}
