//! Spectral concordance loss.
//!
//! ```text
//! laplace  = ‖top_k(L*_A) − top_k(L*_masked)‖₂ / Σ_{i≠j} |L*_A,ij|
//! gram     = ‖top_k(M*_X) − top_k(M*_ZX)‖₂   / Σ_{i≠j} |M*_X,ij|
//! combined = (1 − e^{−laplace}) + β (1 − e^{−gram})
//! total    = combined + (λ/n) Σ zᵢ
//! ```
//!
//! L* = L + α₁I and M*_ZX = Xᵀ diag(z) X + α₂I. The masked Laplacian keeps all
//! n nodes with edge weights zₐ z_b w_ab, so dropped nodes contribute padding
//! eigenvalues equal to α₁ and relaxed masks stay differentiable.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gram_spectrum, laplacian_spectrum, Tape, Var, TIE_LOOKAHEAD};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::sparse::CsrMatrix;
use crate::spectral::{gershgorin_radius, gershgorin_radius_sparse, top_k_eigen};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub k1: usize,
    pub k2: usize,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            k1: 8,
            k2: 8,
            beta: 1.0,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// Default sparsity weight.
pub const DEFAULT_LAMBDA: f64 = 0.005;

impl LossConfig {
    /// Same settings with k1 = k and k2 = min(k, f).
    pub fn with_k(self, k: usize, f: usize) -> Self {
        Self {
            k1: k,
            k2: k.min(f),
            ..self
        }
    }

    pub fn validate(&self, n: usize, f: usize) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) {
            return Err(Error::Parameter("shifts alpha1 and alpha2 must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.lambda >= 0.0) {
            return Err(Error::Parameter("beta and lambda must be nonnegative".into()));
        }
        if self.k1 == 0 || self.k1 > n {
            return Err(Error::Parameter(format!("k1={} outside 1..={n}", self.k1)));
        }
        if self.k2 == 0 || self.k2 > f {
            return Err(Error::Parameter(format!("k2={} outside 1..={f}", self.k2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub laplace: f64,
    pub gram: f64,
    pub combined: f64,
    pub trace_term: f64,
    pub total: f64,
}

fn normalized_gap(reference: &[f64], other: &[f64], radius: f64) -> Result<f64> {
    let num = reference
        .iter()
        .zip(other)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if radius > 0.0 {
        Ok(num / radius)
    } else if num == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::ZeroRadius(num))
    }
}

/// Laplace term from two dense shifted Laplacians.
pub fn laplace_alignment(reference: &Array2<f64>, masked: &Array2<f64>, k1: usize) -> Result<f64> {
    let a = top_k_eigen(reference, k1, false)?;
    let b = top_k_eigen(masked, k1, false)?;
    normalized_gap(&a.values, &b.values, gershgorin_radius(reference))
}

/// Gram term from two dense shifted Gram matrices.
pub fn gram_alignment(reference: &Array2<f64>, masked: &Array2<f64>, k2: usize) -> Result<f64> {
    let a = top_k_eigen(reference, k2, false)?;
    let b = top_k_eigen(masked, k2, false)?;
    normalized_gap(&a.values, &b.values, gershgorin_radius(reference))
}

pub fn spectral_concordance(laplace: f64, gram: f64, beta: f64) -> f64 {
    (1.0 - (-laplace).exp()) + beta * (1.0 - (-gram).exp())
}

/// sc + (λ/n)·Σzᵢ
pub fn sparsification_loss(sc: f64, z: &[f64], lambda: f64) -> f64 {
    sc + trace_term(z, lambda)
}

fn trace_term(z: &[f64], lambda: f64) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    lambda / z.len() as f64 * z.iter().sum::<f64>()
}

/// Reference spectra and normalizers of one graph, plus the sparse operands
/// the masked spectra are computed from.
#[derive(Debug, Clone)]
pub struct SpectralTargets {
    pub config: LossConfig,
    weights: CsrMatrix,
    features: CsrMatrix,
    laplace_ref: Array2<f64>,
    gram_ref: Array2<f64>,
    laplace_radius: f64,
    gram_radius: f64,
}

fn extended(k: usize, dim: usize) -> usize {
    (k + TIE_LOOKAHEAD).min(dim)
}

impl SpectralTargets {
    pub fn new(g: &Graph, x: &FeatureMatrix, config: LossConfig) -> Result<Self> {
        if x.n() != g.n() {
            return Err(Error::Shape(format!(
                "graph has {} nodes, features {} rows",
                g.n(),
                x.n()
            )));
        }
        config.validate(g.n(), x.f())?;
        let weights = g.laplacian_weights();
        let features = x.to_sparse();
        let ones = vec![1.0; g.n()];
        // references go through the same solver calls as masked evaluations,
        // so the full mask reproduces them bit for bit
        let lap = laplacian_spectrum(&weights, &ones, config.alpha1, extended(config.k1, g.n()))?;
        let gram = gram_spectrum(&features, &ones, config.alpha2, extended(config.k2, x.f()))?;
        Ok(Self {
            laplace_radius: gershgorin_radius_sparse(&weights),
            gram_radius: gram_offdiagonal_mass(&features),
            laplace_ref: column(&lap.values[..config.k1]),
            gram_ref: column(&gram.values[..config.k2]),
            weights,
            features,
            config,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.n_rows()
    }

    pub fn laplace_reference(&self) -> &[f64] {
        self.laplace_ref.as_slice().expect("column")
    }

    pub fn gram_reference(&self) -> &[f64] {
        self.gram_ref.as_slice().expect("column")
    }

    pub fn laplace_radius(&self) -> f64 {
        self.laplace_radius
    }

    pub fn gram_radius(&self) -> f64 {
        self.gram_radius
    }

    /// Loss terms for a (relaxed or binary) mask.
    pub fn evaluate(&self, z: &[f64]) -> Result<LossBreakdown> {
        if z.len() != self.n() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} nodes",
                z.len(),
                self.n()
            )));
        }
        let c = &self.config;
        let lap = laplacian_spectrum(&self.weights, z, c.alpha1, extended(c.k1, self.n()))?;
        let gram = gram_spectrum(&self.features, z, c.alpha2, extended(c.k2, self.features.n_cols()))?;
        let laplace = normalized_gap(self.laplace_reference(), &lap.values[..c.k1], self.laplace_radius)?;
        let gram = normalized_gap(self.gram_reference(), &gram.values[..c.k2], self.gram_radius)?;
        let combined = spectral_concordance(laplace, gram, c.beta);
        let trace_term = trace_term(z, c.lambda);
        Ok(LossBreakdown {
            laplace,
            gram,
            combined,
            trace_term,
            total: combined + trace_term,
        })
    }

    /// Record the loss of mask column `z` on `tape`.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, z: Var) -> Result<LossVars> {
        let c = &self.config;
        let lap_top = tape.laplacian_spectrum(z, &self.weights, c.alpha1, c.k1)?;
        let lap_ref = tape.constant_ref(&self.laplace_ref);
        let laplace = self.aligned(tape, lap_ref, lap_top, self.laplace_radius)?;

        let gram_top = tape.gram_spectrum(z, &self.features, c.alpha2, c.k2)?;
        let gram_ref = tape.constant_ref(&self.gram_ref);
        let gram = self.aligned(tape, gram_ref, gram_top, self.gram_radius)?;

        let sat_l = saturate(tape, laplace)?;
        let sat_g = saturate(tape, gram)?;
        let sat_g = tape.scale(sat_g, c.beta)?;
        let combined = tape.add(sat_l, sat_g)?;

        let count = tape.sum(z)?;
        let trace = tape.scale(count, c.lambda / self.n() as f64)?;
        let total = tape.add(combined, trace)?;
        Ok(LossVars {
            laplace,
            gram,
            combined,
            trace,
            total,
        })
    }

    fn aligned<'a>(&self, tape: &mut Tape<'a>, reference: Var, top: Var, radius: f64) -> Result<Var> {
        let diff = tape.sub(reference, top)?;
        let norm = tape.norm2(diff)?;
        if radius > 0.0 {
            tape.scale(norm, 1.0 / radius)
        } else if tape.scalar(norm) == 0.0 {
            tape.scale(norm, 0.0)
        } else {
            Err(Error::ZeroRadius(tape.scalar(norm)))
        }
    }
}

/// 1 − e^{−x}
fn saturate(tape: &mut Tape<'_>, x: Var) -> Result<Var> {
    let neg = tape.scale(x, -1.0)?;
    let e = tape.exp(neg)?;
    let neg_e = tape.scale(e, -1.0)?;
    tape.add_scalar(neg_e, 1.0)
}

/// Handles to the recorded loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub laplace: Var,
    pub gram: Var,
    pub combined: Var,
    pub trace: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape<'_>) -> LossBreakdown {
        LossBreakdown {
            laplace: tape.scalar(self.laplace),
            gram: tape.scalar(self.gram),
            combined: tape.scalar(self.combined),
            trace_term: tape.scalar(self.trace),
            total: tape.scalar(self.total),
        }
    }
}

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("length matches")
}

/// Σ_{i≠j} |(XᵀX)ᵢⱼ|, accumulated row by row from the sparse features.
fn gram_offdiagonal_mass(x: &CsrMatrix) -> f64 {
    let f = x.n_cols();
    let mut gram = Array2::<f64>::zeros((f, f));
    for r in 0..x.n_rows() {
        let (cols, vals) = x.row(r);
        for (a, (&i, &vi)) in cols.iter().zip(vals).enumerate() {
            for (&j, &vj) in cols[a + 1..].iter().zip(&vals[a + 1..]) {
                gram[[i, j]] += vi * vj;
            }
        }
    }
    2.0 * gram.iter().map(|v| v.abs()).sum::<f64>()
}
