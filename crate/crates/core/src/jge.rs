//! Joint graph evolution layers.
//!
//! A layer maps a topology/feature pair (Q, H) of shapes r×r and r×p to a new
//! pair of shapes r'×r' and r'×p':
//!
//! ```text
//! J  = Θ · Hᵀ · U · Q · V · H          (r' × p)
//! Q' = σ₁(J · Φ)                       (r' × r')
//! H' = σ₂(J · Ψ)                       (r' × p')
//! ```
//!
//! U and V are diagonal with Uᵢᵢ = 1/√(Σⱼ|Qᵢⱼ|) and Vⱼⱼ = 1/√(Σᵢ|Qᵢⱼ|) (zero
//! for empty rows/columns), which keeps ‖UQV‖₂ ≤ 1. The light variant shares a
//! single matrix: H' = Θ·Hᵀ·U·Q·U·H and Q' = σ(H'·Θᵀ), keeping the feature
//! width fixed.
//!
//! The first layer sees Q₀ = A and H₀ = X. Its normalizers come from the out-
//! and in-degrees, and it is evaluated through sparse products so the n×n
//! adjacency is never densified.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DegreeVectors, FeatureMatrix, Graph};
use crate::sparse::CsrMatrix;

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// dσ/dx given the input `x` and output `y = σ(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn map(self, m: &Array2<f64>) -> Array2<f64> {
        m.mapv(|v| self.apply(v))
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Parameter(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output sizes and activations of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// r_{t+1}
    pub rows: usize,
    /// p_{t+1}; ignored (fixed to the input feature width) in light mode.
    pub width: usize,
    pub topology_activation: Activation,
    pub feature_activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
    /// Use the single-matrix light layer (undirected graphs only).
    pub light: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::uniform(2, 64, 64, Activation::Tanh, false)
    }
}

impl NetworkConfig {
    /// `depth` identical layers.
    pub fn uniform(depth: usize, rows: usize, width: usize, act: Activation, light: bool) -> Self {
        let spec = LayerSpec {
            rows,
            width,
            topology_activation: act,
            feature_activation: act,
        };
        Self {
            layers: vec![spec; depth],
            light,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self, directed: bool) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Parameter("network needs at least one layer".into()));
        }
        if self.layers.iter().any(|l| l.rows == 0 || (!self.light && l.width == 0)) {
            return Err(Error::Parameter("layer dimensions must be positive".into()));
        }
        if self.light && directed {
            return Err(Error::Parameter(
                "light layers require a symmetric (undirected) input graph".into(),
            ));
        }
        Ok(())
    }

    /// (rows, width) entering each layer followed by the final output pair,
    /// given the input graph size n and feature width f.
    pub fn dims(&self, n: usize, f: usize) -> Vec<(usize, usize)> {
        let mut out = vec![(n, f)];
        for l in &self.layers {
            let width = if self.light { f } else { l.width };
            out.push((l.rows, width));
        }
        out
    }

    /// Length of the flattened (Q_T, H_T) vector fed to the head.
    pub fn head_input_len(&self, f: usize) -> usize {
        let (r, p) = *self.dims(0, f).last().expect("dims is never empty");
        r * r + r * p
    }

    /// Parameter shapes per layer: Θ, then Φ and Ψ unless light.
    pub fn param_shapes(&self, f: usize) -> Vec<Vec<(usize, usize)>> {
        let dims = self.dims(0, f);
        dims.windows(2)
            .map(|w| {
                let ((_, p_in), (r_out, p_out)) = (w[0], w[1]);
                if self.light {
                    vec![(r_out, f)]
                } else {
                    vec![(r_out, p_in), (p_in, r_out), (p_in, p_out)]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub theta: Array2<f64>,
    pub phi: Option<Array2<f64>>,
    pub psi: Option<Array2<f64>>,
}

impl LayerParams {
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        std::iter::once(&self.theta)
            .chain(self.phi.as_ref())
            .chain(self.psi.as_ref())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        std::iter::once(&mut self.theta)
            .chain(self.phi.as_mut())
            .chain(self.psi.as_mut())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JgeParams {
    pub layers: Vec<LayerParams>,
}

impl JgeParams {
    /// All matrices in layer order (Θ, Φ, Ψ per layer).
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    /// Rebuild from matrices in [`tensors`](Self::tensors) order, checking shapes.
    pub fn from_tensors(config: &NetworkConfig, f: usize, tensors: Vec<Array2<f64>>) -> Result<Self> {
        let shapes = config.param_shapes(f);
        let expected: usize = shapes.iter().map(Vec::len).sum();
        if tensors.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} parameter matrices, got {}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::new();
        for layer_shapes in shapes {
            let mut mats = Vec::new();
            for shape in layer_shapes {
                let m = it.next().expect("count checked");
                if m.dim() != shape {
                    return Err(Error::Shape(format!("parameter is {:?}, expected {shape:?}", m.dim())));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite);
                }
                mats.push(m);
            }
            let mut mats = mats.into_iter();
            layers.push(LayerParams {
                theta: mats.next().expect("theta always present"),
                phi: mats.next(),
                psi: mats.next(),
            });
        }
        Ok(Self { layers })
    }
}

/// The (Q, H) pair between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub q: Array2<f64>,
    pub h: Array2<f64>,
    pub t: usize,
}

/// Row and column normalizers (diagonals of U and V).
///
/// With `degrees` supplied (first layer) U uses out-degrees and V in-degrees;
/// undirected degree vectors use the total degree for both.
pub fn degree_normalizers(q: &Array2<f64>, degrees: Option<&DegreeVectors>) -> (Vec<f64>, Vec<f64>) {
    let inv_sqrt = |s: f64| if s > 0.0 { 1.0 / s.sqrt() } else { 0.0 };
    match degrees {
        Some(d) => {
            let out = d.outdeg.as_ref().unwrap_or(&d.total);
            let inn = d.indeg.as_ref().unwrap_or(&d.total);
            (
                out.iter().map(|&k| inv_sqrt(k as f64)).collect(),
                inn.iter().map(|&k| inv_sqrt(k as f64)).collect(),
            )
        }
        None => {
            let rows = q.map_axis(Axis(1), |r| inv_sqrt(r.iter().map(|v| v.abs()).sum()));
            let cols = q.map_axis(Axis(0), |c| inv_sqrt(c.iter().map(|v| v.abs()).sum()));
            (rows.to_vec(), cols.to_vec())
        }
    }
}

/// diag(u) · Q · diag(v)
pub fn normalize(q: &Array2<f64>, u: &[f64], v: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn(q.dim(), |(i, j)| u[i] * q[[i, j]] * v[j])
}

fn check_finite(m: &Array2<f64>, what: &str, t: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow(format!("{what} at layer {t}")))
    }
}

fn check_square_state(state: &LayerState) -> Result<()> {
    let r = state.q.nrows();
    if !state.q.is_square() || state.h.nrows() != r {
        return Err(Error::Shape(format!(
            "layer {} state has Q {:?} and H {:?}",
            state.t,
            state.q.dim(),
            state.h.dim()
        )));
    }
    Ok(())
}

/// One full layer on a dense state.
pub fn jge_forward(
    state: &LayerState,
    params: &LayerParams,
    spec: &LayerSpec,
    degrees: Option<&DegreeVectors>,
) -> Result<LayerState> {
    check_square_state(state)?;
    let (phi, psi) = match (&params.phi, &params.psi) {
        (Some(phi), Some(psi)) => (phi, psi),
        _ => return Err(Error::Shape("full layer needs Φ and Ψ".into())),
    };
    let p = state.h.ncols();
    if params.theta.ncols() != p || phi.nrows() != p || psi.nrows() != p || phi.ncols() != params.theta.nrows() {
        return Err(Error::Shape(format!(
            "Θ {:?}, Φ {:?}, Ψ {:?} do not fit H {:?}",
            params.theta.dim(),
            phi.dim(),
            psi.dim(),
            state.h.dim()
        )));
    }
    let (u, v) = degree_normalizers(&state.q, degrees);
    let core = normalize(&state.q, &u, &v);
    let bilinear = state.h.t().dot(&core.dot(&state.h));
    let j = params.theta.dot(&bilinear);
    check_finite(&j, "J", state.t)?;
    finish_full(j, phi, psi, spec, state.t)
}

fn finish_full(j: Array2<f64>, phi: &Array2<f64>, psi: &Array2<f64>, spec: &LayerSpec, t: usize) -> Result<LayerState> {
    let q = spec.topology_activation.map(&j.dot(phi));
    let h = spec.feature_activation.map(&j.dot(psi));
    check_finite(&q, "Q", t + 1)?;
    check_finite(&h, "H", t + 1)?;
    Ok(LayerState { q, h, t: t + 1 })
}

/// One light layer; Q must be symmetric.
pub fn ljge_forward(
    state: &LayerState,
    theta: &Array2<f64>,
    activation: Activation,
    degrees: Option<&DegreeVectors>,
) -> Result<LayerState> {
    check_square_state(state)?;
    let asym = state
        .q
        .indexed_iter()
        .map(|((i, j), &x)| (x - state.q[[j, i]]).abs())
        .fold(0.0f64, f64::max);
    if asym > 1e-10 {
        return Err(Error::Asymmetric(asym));
    }
    ljge_unchecked(state, theta, activation, degrees)
}

fn ljge_unchecked(
    state: &LayerState,
    theta: &Array2<f64>,
    activation: Activation,
    degrees: Option<&DegreeVectors>,
) -> Result<LayerState> {
    if theta.ncols() != state.h.ncols() {
        return Err(Error::Shape(format!(
            "Θ {:?} does not fit H {:?}",
            theta.dim(),
            state.h.dim()
        )));
    }
    let (u, _) = degree_normalizers(&state.q, degrees);
    let core = normalize(&state.q, &u, &u);
    let h = theta.dot(&state.h.t().dot(&core.dot(&state.h)));
    check_finite(&h, "H", state.t + 1)?;
    let q = activation.map(&h.dot(&theta.t()));
    check_finite(&q, "Q", state.t + 1)?;
    Ok(LayerState { q, h, t: state.t + 1 })
}

/// Sparse operands of the first layer: X, Xᵀ and the normalized adjacency
/// S = U₀·A·V₀ with its transpose.
#[derive(Debug, Clone)]
pub struct GraphOperands {
    pub x: CsrMatrix,
    pub xt: CsrMatrix,
    pub s: CsrMatrix,
    pub st: CsrMatrix,
    pub degrees: DegreeVectors,
}

impl GraphOperands {
    pub fn new(g: &Graph, x: &FeatureMatrix) -> Result<Self> {
        if x.n() != g.n() {
            return Err(Error::Shape(format!(
                "graph has {} nodes, features {} rows",
                g.n(),
                x.n()
            )));
        }
        let degrees = g.degrees();
        let dense_zero = Array2::zeros((0, 0));
        let (u, v) = degree_normalizers(&dense_zero, Some(&degrees));
        let a = g.adjacency_sparse();
        let s = CsrMatrix::from_triplets(g.n(), g.n(), a.iter().map(|(i, j, w)| (i, j, u[i] * w * v[j])));
        let xs = x.to_sparse();
        Ok(Self {
            xt: xs.transpose(),
            x: xs,
            st: s.transpose(),
            s,
            degrees,
        })
    }

    /// Θ · Xᵀ · S · X, the first-layer J without densifying A.
    pub fn first_layer_product(&self, theta: &Array2<f64>) -> Array2<f64> {
        // (Θ Xᵀ)ᵀ = X Θᵀ, then Sᵀ (X Θᵀ), then Xᵀ (·); transpose back at the end
        let a = self.x.mul_dense(theta.t());
        let b = self.st.mul_dense(a.view());
        self.xt
            .mul_dense(b.view())
            .reversed_axes()
            .as_standard_layout()
            .into_owned()
    }
}

/// Run all layers from (A, X). Returns (Q_T, H_T).
pub fn network_forward(g: &Graph, x: &FeatureMatrix, params: &JgeParams, config: &NetworkConfig) -> Result<LayerState> {
    let ops = GraphOperands::new(g, x)?;
    network_forward_with(&ops, params, config)
}

/// As [`network_forward`] with precomputed first-layer operands.
pub fn network_forward_with(ops: &GraphOperands, params: &JgeParams, config: &NetworkConfig) -> Result<LayerState> {
    config.validate(ops.degrees.indeg.is_some())?;
    if params.layers.len() != config.depth() {
        return Err(Error::Shape(format!(
            "{} parameter layers for a {}-layer network",
            params.layers.len(),
            config.depth()
        )));
    }
    let f = ops.x.n_cols();
    let shapes = config.param_shapes(f);
    for (lp, shape) in params.layers.iter().zip(&shapes) {
        let got: Vec<_> = lp.tensors().iter().map(|m| m.dim()).collect();
        if &got != shape {
            return Err(Error::Shape(format!("layer parameters {got:?}, expected {shape:?}")));
        }
    }

    let first = &params.layers[0];
    let spec0 = &config.layers[0];
    let j = ops.first_layer_product(&first.theta);
    check_finite(&j, "J", 0)?;
    let mut state = if config.light {
        let q = spec0.topology_activation.map(&j.dot(&first.theta.t()));
        check_finite(&q, "Q", 1)?;
        LayerState { q, h: j, t: 1 }
    } else {
        let phi = first.phi.as_ref().expect("shapes checked");
        let psi = first.psi.as_ref().expect("shapes checked");
        finish_full(j, phi, psi, spec0, 0)?
    };

    for (lp, spec) in params.layers.iter().zip(&config.layers).skip(1) {
        state = if config.light {
            // Q' = σ(H'Θᵀ) is not symmetric in general; deeper light layers
            // act on its symmetric part.
            let sym = LayerState {
                q: (&state.q + &state.q.t()) * 0.5,
                h: state.h,
                t: state.t,
            };
            ljge_unchecked(&sym, &lp.theta, spec.topology_activation, None)?
        } else {
            jge_forward(&state, lp, spec, None)?
        };
    }
    Ok(state)
}

/// Zero-mean uniform draws with variance 2/(rows + cols) per matrix.
pub fn init_params(config: &NetworkConfig, f: usize, seed: u64) -> JgeParams {
    init_params_with(config, f, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// As [`init_params`], drawing from an existing generator.
pub fn init_params_with(config: &NetworkConfig, f: usize, rng: &mut ChaCha8Rng) -> JgeParams {
    let tensors = config
        .param_shapes(f)
        .into_iter()
        .flatten()
        .map(|shape| scaled_uniform(rng, shape))
        .collect();
    JgeParams::from_tensors(config, f, tensors).expect("shapes generated from config")
}

pub(crate) fn scaled_uniform(rng: &mut ChaCha8Rng, (rows, cols): (usize, usize)) -> Array2<f64> {
    // U(−a, a) has variance a²/3
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalizers_of_two_cycle() {
        let q = array![[0.0, 2.0], [2.0, 0.0]];
        let (u, v) = degree_normalizers(&q, None);
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(u, vec![s, s]);
        assert_eq!(v, vec![s, s]);
        let n = normalize(&q, &u, &v);
        assert!((n[[0, 1]] - 1.0).abs() < 1e-15);
        assert_eq!(n[[0, 0]], 0.0);
    }

    #[test]
    fn zero_row_gets_zero_normalizer() {
        let q = array![[0.0, 0.0], [1.0, 3.0]];
        let (u, v) = degree_normalizers(&q, None);
        assert_eq!(u[0], 0.0);
        assert_eq!(v, vec![1.0, 1.0 / 3f64.sqrt()]);
    }

    #[test]
    fn zero_theta_gives_constant_outputs() {
        let spec = LayerSpec {
            rows: 2,
            width: 3,
            topology_activation: Activation::Sigmoid,
            feature_activation: Activation::Tanh,
        };
        let state = LayerState {
            q: array![[0.0, 1.0], [1.0, 0.0]],
            h: array![[1.0, 2.0], [3.0, 4.0]],
            t: 0,
        };
        let params = LayerParams {
            theta: Array2::zeros((2, 2)),
            phi: Some(Array2::ones((2, 2))),
            psi: Some(Array2::ones((2, 3))),
        };
        let out = jge_forward(&state, &params, &spec, None).unwrap();
        assert!(out.q.iter().all(|&v| v == 0.5));
        assert!(out.h.iter().all(|&v| v == 0.0));
        assert_eq!(out.h.dim(), (2, 3));
    }

    #[test]
    fn light_layer_rejects_asymmetric_q() {
        let state = LayerState {
            q: array![[0.0, 1.0], [0.0, 0.0]],
            h: Array2::ones((2, 2)),
            t: 0,
        };
        assert!(matches!(
            ljge_forward(&state, &Array2::ones((3, 2)), Activation::Tanh, None),
            Err(Error::Asymmetric(_))
        ));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = NetworkConfig::uniform(2, 4, 5, Activation::Tanh, false);
        assert_eq!(init_params(&cfg, 3, 7), init_params(&cfg, 3, 7));
        assert_ne!(init_params(&cfg, 3, 7), init_params(&cfg, 3, 8));
        let p = init_params(&cfg, 3, 7);
        assert_eq!(p.layers[0].theta.dim(), (4, 3));
        assert_eq!(p.layers[0].phi.as_ref().unwrap().dim(), (3, 4));
        assert_eq!(p.layers[1].psi.as_ref().unwrap().dim(), (5, 5));
        assert_eq!(cfg.head_input_len(3), 16 + 20);
    }

    #[test]
    fn edgeless_graph_zeroes_first_product() {
        let g = Graph::empty(3, true);
        let x = FeatureMatrix::new(Array2::ones((3, 2))).unwrap();
        let ops = GraphOperands::new(&g, &x).unwrap();
        let j = ops.first_layer_product(&Array2::ones((4, 2)));
        assert!(j.iter().all(|&v| v == 0.0));
    }
}
