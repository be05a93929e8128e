//! Node-selection head: a dense layer over the flattened final layer state,
//! a Gumbel-sigmoid relaxation for training, and hard masks for evaluation.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, MaskedSubgraph};
use crate::jge::{scaled_uniform, sigmoid};

/// logits = W · (vec(Q_T) ⊕ vec(H_T)) + b, one logit per original node.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// n × (r_T² + r_T·p_T)
    pub w: Array2<f64>,
    /// n × 1
    pub b: Array2<f64>,
}

impl HeadParams {
    /// Scaled-uniform weights, zero bias.
    pub fn init(n: usize, input_len: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: scaled_uniform(rng, (n, input_len)),
            b: Array2::zeros((n, 1)),
        }
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_len(&self) -> usize {
        self.w.ncols()
    }
}

/// A node mask. `relaxed` holds the sigmoid outputs the mask was derived
/// from; `hard` is present once thresholded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub relaxed: Vec<f64>,
    pub hard: Option<Vec<bool>>,
    pub temperature: f64,
}

impl Mask {
    pub fn kept(&self) -> usize {
        self.hard.as_ref().map_or(0, |h| h.iter().filter(|&&b| b).count())
    }
}

/// One standard Gumbel draw, −ln(−ln U) with U uniform on (0, 1).
pub fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -(-u.ln()).ln();
        }
    }
}

/// Per-node g¹ − g² (logistic-distributed).
pub fn sample_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| gumbel(rng) - gumbel(rng)).collect()
}

/// Row-major vec(Q) ⊕ vec(H).
pub fn flatten_state(q: &Array2<f64>, h: &Array2<f64>) -> Vec<f64> {
    q.iter().chain(h.iter()).copied().collect()
}

pub fn head_logits(q: &Array2<f64>, h: &Array2<f64>, head: &HeadParams) -> Result<Vec<f64>> {
    let v = flatten_state(q, h);
    if v.len() != head.input_len() {
        return Err(Error::Shape(format!(
            "head expects {} inputs, state flattens to {}",
            head.input_len(),
            v.len()
        )));
    }
    let v = ndarray::Array1::from(v);
    Ok((head.w.dot(&v) + head.b.column(0)).to_vec())
}

/// Relaxed mask sigmoid((logits + g¹ − g²)/τ). Without noise this is the
/// plain tempered sigmoid.
pub fn select_nodes(
    q: &Array2<f64>,
    h: &Array2<f64>,
    head: &HeadParams,
    tau: f64,
    noise: Option<&[f64]>,
) -> Result<Mask> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let logits = head_logits(q, h, head)?;
    if let Some(g) = noise {
        if g.len() != logits.len() {
            return Err(Error::Shape(format!(
                "{} noise values for {} nodes",
                g.len(),
                logits.len()
            )));
        }
    }
    let relaxed = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| sigmoid((l + noise.map_or(0.0, |g| g[i])) / tau))
        .collect();
    Ok(Mask {
        relaxed,
        hard: None,
        temperature: tau,
    })
}

/// Threshold at 0.5 (strictly greater keeps the node).
pub fn harden(mask: &Mask) -> Mask {
    Mask {
        relaxed: mask.relaxed.clone(),
        hard: Some(mask.relaxed.iter().map(|&z| z > 0.5).collect()),
        temperature: mask.temperature,
    }
}

/// Noise-free evaluation mask from logits.
pub fn evaluation_mask(logits: &[f64]) -> Mask {
    harden(&Mask {
        relaxed: logits.iter().map(|&l| sigmoid(l)).collect(),
        hard: None,
        temperature: 1.0,
    })
}

/// Drop kept nodes left without any incident edge.
pub fn remove_isolated(sub: &MaskedSubgraph) -> MaskedSubgraph {
    let g = &sub.graph;
    let deg = g.degrees().total;
    let survivors: Vec<usize> = (0..g.n()).filter(|&i| deg[i] > 0).collect();
    let mut index = vec![usize::MAX; g.n()];
    for (new, &old) in survivors.iter().enumerate() {
        index[old] = new;
    }
    let graph = Graph::from_edges(
        survivors.len(),
        g.is_directed(),
        g.edges().iter().map(|&(t, h)| (index[t], index[h])),
    )
    .expect("surviving endpoints are remapped in range");
    MaskedSubgraph {
        graph,
        features: FeatureMatrix::new(sub.features.data().select(ndarray::Axis(0), &survivors))
            .expect("rows come from a finite matrix"),
        kept: survivors.iter().map(|&i| sub.kept[i]).collect(),
        n_original: sub.n_original,
    }
}

/// JSON sidecar for exported masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub n: usize,
    pub kept: usize,
    pub temperature: f64,
    pub seed: u64,
    pub isolated_removed: bool,
}
