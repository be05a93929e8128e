//! Reverse-mode differentiation over a recorded sequence of matrix primitives.
//!
//! Every value is an `Array2<f64>`; vectors are n×1 columns and scalars 1×1.
//! Parameters are registered into numbered slots and borrowed, not copied, so
//! large head matrices cost nothing to record. Eigenvalue primitives keep the
//! eigenvectors they computed and differentiate with ∂λᵢ/∂M = uᵢuᵢᵀ, spreading
//! the upstream gradient evenly over clusters of (near-)equal eigenvalues.

use std::borrow::Cow;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::jge::Activation;
use crate::sparse::CsrMatrix;
use crate::spectral::{cluster_weights, top_k_eigen, top_k_operator, MaskedGram, MaskedLaplacian, Spectrum};

/// Extra eigenpairs computed past k so ties straddling the cut are detected.
pub const TIE_LOOKAHEAD: usize = 3;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A sparse constant together with its transpose.
#[derive(Debug, Clone, Copy)]
pub struct SparsePair<'a> {
    pub m: &'a CsrMatrix,
    pub mt: &'a CsrMatrix,
}

#[derive(Debug, Clone)]
enum Op<'a> {
    Param(usize),
    Const,
    MatMul(Var, Var),
    /// a · S
    SparseRight(Var, SparsePair<'a>),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    AddDiag(Var, f64),
    /// diag(d) · M
    ScaleRows(Var, Var),
    /// M · diag(d)
    ScaleCols(Var, Var),
    RowNormalizer(Var),
    ColNormalizer(Var),
    Act(Var, Activation),
    Exp(Var),
    Flatten(Vec<Var>),
    Sum(Var),
    Norm2(Var),
    /// zₐ z_b wₐ_b, dense
    MaskedAdjacency(Var, &'a CsrMatrix),
    /// diag(W·1) − W + αI
    ShiftedLaplacian(Var, f64),
    /// Xᵀ diag(z) X + αI
    ShiftedGram(Var, &'a Array2<f64>, f64),
    TopKEigen(Var, usize),
    LaplacianSpectrum {
        z: Var,
        weights: &'a CsrMatrix,
        shift: f64,
        k: usize,
    },
    GramSpectrum {
        z: Var,
        x: &'a CsrMatrix,
        shift: f64,
        k: usize,
    },
}

#[derive(Debug, Clone)]
struct Node<'a> {
    op: Op<'a>,
    value: Cow<'a, Array2<f64>>,
    /// eigenpairs kept by spectral primitives
    spectrum: Option<Spectrum>,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    slots: Vec<Option<(usize, usize)>>,
    degenerate: usize,
}

/// Gradient per parameter slot; slots never touched by the loss are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * c);
        }
    }
}

fn col(values: Vec<f64>) -> Array2<f64> {
    let n = values.len();
    Array2::from_shape_vec((n, 1), values).expect("length matches")
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

fn is_column(m: &Array2<f64>) -> bool {
    m.ncols() == 1
}

/// Extended eigen request: k plus lookahead, capped at the dimension.
fn extended(k: usize, dim: usize) -> usize {
    (k + TIE_LOOKAHEAD).min(dim)
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Number of eigenvalue primitives that met a degenerate cluster.
    pub fn degenerate_clusters(&self) -> usize {
        self.degenerate
    }

    fn push(&mut self, op: Op<'a>, value: Array2<f64>, spectrum: Option<Spectrum>) -> Var {
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
            spectrum,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<'a>) -> Result<Var> {
        let (value, spectrum) = self.eval(&op)?;
        if let Some(sp) = &spectrum {
            if spectrum_degenerate(&op, sp) {
                self.degenerate += 1;
            }
        }
        Ok(self.push(op, value, spectrum))
    }

    /// Register a borrowed trainable tensor under `slot`.
    pub fn param(&mut self, slot: usize, value: &'a Array2<f64>) -> Var {
        if self.slots.len() <= slot {
            self.slots.resize(slot + 1, None);
        }
        self.slots[slot] = Some(value.dim());
        self.nodes.push(Node {
            op: Op::Param(slot),
            value: Cow::Borrowed(value),
            spectrum: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Const, value, None)
    }

    pub fn constant_ref(&mut self, value: &'a Array2<f64>) -> Var {
        self.nodes.push(Node {
            op: Op::Const,
            value: Cow::Borrowed(value),
            spectrum: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn sparse_right(&mut self, a: Var, s: SparsePair<'a>) -> Result<Var> {
        self.record(Op::SparseRight(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::AddScalar(a, c))
    }

    pub fn add_diag(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::AddDiag(a, c))
    }

    pub fn scale_rows(&mut self, d: Var, m: Var) -> Result<Var> {
        self.record(Op::ScaleRows(d, m))
    }

    pub fn scale_cols(&mut self, m: Var, d: Var) -> Result<Var> {
        self.record(Op::ScaleCols(m, d))
    }

    /// 1/√(Σⱼ|Mᵢⱼ|) per row (0 for empty rows), as a column.
    pub fn row_normalizer(&mut self, m: Var) -> Result<Var> {
        self.record(Op::RowNormalizer(m))
    }

    /// 1/√(Σᵢ|Mᵢⱼ|) per column (0 for empty columns), as a column.
    pub fn col_normalizer(&mut self, m: Var) -> Result<Var> {
        self.record(Op::ColNormalizer(m))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        self.record(Op::Act(a, act))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp(a))
    }

    /// Row-major flatten of each input, concatenated into one column.
    pub fn flatten(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::Flatten(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    /// Frobenius (Euclidean for vectors) norm.
    pub fn norm2(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Norm2(a))
    }

    pub fn masked_adjacency(&mut self, z: Var, weights: &'a CsrMatrix) -> Result<Var> {
        self.record(Op::MaskedAdjacency(z, weights))
    }

    pub fn shifted_laplacian(&mut self, w: Var, alpha: f64) -> Result<Var> {
        self.record(Op::ShiftedLaplacian(w, alpha))
    }

    pub fn shifted_gram(&mut self, z: Var, x: &'a Array2<f64>, alpha: f64) -> Result<Var> {
        self.record(Op::ShiftedGram(z, x, alpha))
    }

    /// The k largest eigenvalues of a dense symmetric matrix, as a column.
    pub fn top_k_eigen(&mut self, m: Var, k: usize) -> Result<Var> {
        self.record(Op::TopKEigen(m, k))
    }

    /// Top-k eigenvalues of the masked Laplacian (zₐ z_b w_ab) + shift·I,
    /// evaluated matrix-free.
    pub fn laplacian_spectrum(&mut self, z: Var, weights: &'a CsrMatrix, shift: f64, k: usize) -> Result<Var> {
        self.record(Op::LaplacianSpectrum { z, weights, shift, k })
    }

    /// Top-k eigenvalues of Xᵀ diag(z) X + shift·I, evaluated matrix-free.
    pub fn gram_spectrum(&mut self, z: Var, x: &'a CsrMatrix, shift: f64, k: usize) -> Result<Var> {
        self.record(Op::GramSpectrum { z, x, shift, k })
    }

    fn eval(&self, op: &Op<'a>) -> Result<(Array2<f64>, Option<Spectrum>)> {
        let val = |v: &Var| -> &Array2<f64> { &self.nodes[v.0].value };
        let out = match op {
            Op::Param(_) | Op::Const => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => {
                let (a, b) = (val(a), val(b));
                if a.ncols() != b.nrows() {
                    return Err(shape_err("matmul", a.dim(), b.dim()));
                }
                a.dot(b)
            }
            Op::SparseRight(a, s) => {
                let a = val(a);
                if a.ncols() != s.m.n_rows() {
                    return Err(shape_err("sparse product", a.dim(), (s.m.n_rows(), s.m.n_cols())));
                }
                // (a S)ᵀ = Sᵀ aᵀ
                s.mt.mul_dense(a.t()).reversed_axes().as_standard_layout().into_owned()
            }
            Op::Transpose(a) => val(a).t().as_standard_layout().into_owned(),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (a2, b2) = (val(a), val(b));
                if a2.dim() != b2.dim() {
                    return Err(shape_err("elementwise", a2.dim(), b2.dim()));
                }
                if matches!(op, Op::Add(..)) {
                    a2 + b2
                } else {
                    a2 - b2
                }
            }
            Op::Scale(a, c) => val(a) * *c,
            Op::AddScalar(a, c) => val(a) + *c,
            Op::AddDiag(a, c) => {
                let mut m = val(a).clone();
                if !m.is_square() {
                    return Err(Error::Shape(format!("diagonal shift of {:?}", m.dim())));
                }
                m.diag_mut().iter_mut().for_each(|v| *v += c);
                m
            }
            Op::ScaleRows(d, m) => {
                let (d, m) = (val(d), val(m));
                if !is_column(d) || d.nrows() != m.nrows() {
                    return Err(shape_err("row scaling", d.dim(), m.dim()));
                }
                Array2::from_shape_fn(m.dim(), |(i, j)| d[[i, 0]] * m[[i, j]])
            }
            Op::ScaleCols(m, d) => {
                let (m, d) = (val(m), val(d));
                if !is_column(d) || d.nrows() != m.ncols() {
                    return Err(shape_err("column scaling", m.dim(), d.dim()));
                }
                Array2::from_shape_fn(m.dim(), |(i, j)| m[[i, j]] * d[[j, 0]])
            }
            Op::RowNormalizer(m) => col(abs_sums(val(m), Axis(1)).into_iter().map(inv_sqrt).collect()),
            Op::ColNormalizer(m) => col(abs_sums(val(m), Axis(0)).into_iter().map(inv_sqrt).collect()),
            Op::Act(a, act) => act.map(val(a)),
            Op::Exp(a) => val(a).mapv(f64::exp),
            Op::Flatten(parts) => col(parts.iter().flat_map(|p| val(p).iter().copied()).collect()),
            Op::Sum(a) => scalar(val(a).sum()),
            Op::Norm2(a) => scalar(val(a).iter().map(|v| v * v).sum::<f64>().sqrt()),
            Op::MaskedAdjacency(z, w) => {
                let z = val(z);
                if !is_column(z) || z.nrows() != w.n_rows() {
                    return Err(shape_err("masked adjacency", z.dim(), (w.n_rows(), w.n_cols())));
                }
                let mut out = Array2::zeros((w.n_rows(), w.n_cols()));
                for (i, j, v) in w.iter() {
                    out[[i, j]] = z[[i, 0]] * z[[j, 0]] * v;
                }
                out
            }
            Op::ShiftedLaplacian(w, alpha) => {
                let w = val(w);
                if !w.is_square() {
                    return Err(Error::Shape(format!("Laplacian of {:?}", w.dim())));
                }
                let mut l = -w;
                for (i, d) in w.sum_axis(Axis(1)).iter().enumerate() {
                    l[[i, i]] += d + alpha;
                }
                l
            }
            Op::ShiftedGram(z, x, alpha) => {
                let z = val(z);
                if !is_column(z) || z.nrows() != x.nrows() {
                    return Err(shape_err("Gram mask", z.dim(), x.dim()));
                }
                let mut zx = (*x).clone();
                for (mut row, &zi) in zx.rows_mut().into_iter().zip(z.iter()) {
                    row *= zi;
                }
                let mut m = x.t().dot(&zx);
                m.diag_mut().iter_mut().for_each(|v| *v += alpha);
                m
            }
            Op::TopKEigen(m, k) => {
                let m = val(m);
                let kx = extended(*k, m.nrows());
                let sp = top_k_eigen(m, kx.max(*k), true)?;
                return Ok((col(sp.values[..*k].to_vec()), Some(sp)));
            }
            Op::LaplacianSpectrum { z, weights, shift, k } => {
                let z = val(z);
                if !is_column(z) || z.nrows() != weights.n_rows() {
                    return Err(shape_err("Laplacian mask", z.dim(), (weights.n_rows(), 1)));
                }
                let zs = z.as_slice().expect("owned column is contiguous");
                let sp = laplacian_spectrum(weights, zs, *shift, extended(*k, z.nrows()))?;
                return Ok((col(sp.values[..*k].to_vec()), Some(sp)));
            }
            Op::GramSpectrum { z, x, shift, k } => {
                let z = val(z);
                if !is_column(z) || z.nrows() != x.n_rows() {
                    return Err(shape_err("Gram mask", z.dim(), (x.n_rows(), 1)));
                }
                let zs = z.as_slice().expect("owned column is contiguous");
                let sp = gram_spectrum(x, zs, *shift, extended(*k, x.n_cols()))?;
                return Ok((col(sp.values[..*k].to_vec()), Some(sp)));
            }
        };
        Ok((out, None))
    }

    /// Recompute every non-leaf value from the recorded operations.
    pub fn replay(&self) -> Result<Vec<Array2<f64>>> {
        let mut tape = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
            slots: self.slots.clone(),
            degenerate: 0,
        };
        for node in &self.nodes {
            match node.op {
                Op::Param(_) | Op::Const => tape.nodes.push(Node {
                    op: node.op.clone(),
                    value: node.value.clone(),
                    spectrum: None,
                }),
                _ => {
                    tape.record(node.op.clone())?;
                }
            }
        }
        Ok(tape.nodes.into_iter().map(|n| n.value.into_owned()).collect())
    }

    /// Values of every node in recording order.
    pub fn values(&self) -> Vec<&Array2<f64>> {
        self.nodes.iter().map(|n| n.value.as_ref()).collect()
    }

    /// Gradients of the scalar `loss` with respect to every parameter slot.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.dim() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[loss.0].value.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(scalar(1.0));
        let mut out: Vec<Option<Array2<f64>>> = vec![None; self.slots.len()];

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: &Var| -> &Array2<f64> { &self.nodes[v.0].value };
            let mut send = |v: Var, contrib: Array2<f64>| match &mut grads[v.0] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            };
            match &node.op {
                Op::Param(slot) => match &mut out[*slot] {
                    Some(acc) => *acc += &g,
                    s @ None => *s = Some(g),
                },
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    send(*a, g.dot(&bv.t()));
                    send(*b, av.t().dot(&g));
                }
                Op::SparseRight(a, s) => {
                    // d(a S)/da: g Sᵀ = (S gᵀ)ᵀ
                    send(
                        *a,
                        s.m.mul_dense(g.t()).reversed_axes().as_standard_layout().into_owned(),
                    );
                }
                Op::Transpose(a) => send(*a, g.t().as_standard_layout().into_owned()),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, -&g);
                    send(*a, g);
                }
                Op::Scale(a, c) => send(*a, g * *c),
                Op::AddScalar(a, _) | Op::AddDiag(a, _) => send(*a, g),
                Op::ScaleRows(d, m) => {
                    let (dv, mv) = (val(d), val(m));
                    let dd = (&g * mv).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let dm = Array2::from_shape_fn(g.dim(), |(i, j)| dv[[i, 0]] * g[[i, j]]);
                    send(*d, dd);
                    send(*m, dm);
                }
                Op::ScaleCols(m, d) => {
                    let (mv, dv) = (val(m), val(d));
                    let dd = (&g * mv).sum_axis(Axis(0)).insert_axis(Axis(1));
                    let dm = Array2::from_shape_fn(g.dim(), |(i, j)| g[[i, j]] * dv[[j, 0]]);
                    send(*d, dd);
                    send(*m, dm);
                }
                Op::RowNormalizer(m) | Op::ColNormalizer(m) => {
                    let mv = val(m);
                    let rows = matches!(node.op, Op::RowNormalizer(_));
                    let axis = if rows { Axis(1) } else { Axis(0) };
                    let sums = abs_sums(mv, axis);
                    // d(s^-1/2)/ds = -½ s^-3/2, ds/dmᵢⱼ = sign(mᵢⱼ)
                    let coef: Vec<f64> = sums
                        .iter()
                        .zip(g.iter())
                        .map(|(&s, &gi)| if s > 0.0 { -0.5 * gi * s.powf(-1.5) } else { 0.0 })
                        .collect();
                    let dm = Array2::from_shape_fn(mv.dim(), |(i, j)| {
                        let c = if rows { coef[i] } else { coef[j] };
                        c * sign(mv[[i, j]])
                    });
                    send(*m, dm);
                }
                Op::Act(a, act) => {
                    let av = val(a);
                    let y = &node.value;
                    let da = Array2::from_shape_fn(g.dim(), |ij| g[ij] * act.derivative(av[ij], y[ij]));
                    send(*a, da);
                }
                Op::Exp(a) => send(*a, &g * node.value.as_ref()),
                Op::Flatten(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let dim = val(p).dim();
                        let len = dim.0 * dim.1;
                        let piece = g
                            .slice(s![offset..offset + len, 0])
                            .to_owned()
                            .into_shape_with_order(dim)
                            .expect("length matches");
                        offset += len;
                        send(*p, piece);
                    }
                }
                Op::Sum(a) => send(*a, Array2::from_elem(val(a).dim(), g[[0, 0]])),
                Op::Norm2(a) => {
                    let av = val(a);
                    let norm = node.value[[0, 0]];
                    if norm > 0.0 {
                        send(*a, av * (g[[0, 0]] / norm));
                    } else {
                        send(*a, Array2::zeros(av.dim()));
                    }
                }
                Op::MaskedAdjacency(z, w) => {
                    let zv = val(z);
                    let mut dz = Array2::zeros(zv.dim());
                    for (i, j, v) in w.iter() {
                        let gij = g[[i, j]] * v;
                        dz[[i, 0]] += gij * zv[[j, 0]];
                        dz[[j, 0]] += gij * zv[[i, 0]];
                    }
                    send(*z, dz);
                }
                Op::ShiftedLaplacian(w, _) => {
                    let diag = g.diag().to_owned();
                    let dw = Array2::from_shape_fn(g.dim(), |(i, j)| diag[i] - g[[i, j]]);
                    send(*w, dw);
                }
                Op::ShiftedGram(z, x, _) => {
                    // dzⱼ = xⱼᵀ G xⱼ
                    let gx = x.dot(&g);
                    let dz = (&gx * *x).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*z, dz);
                }
                Op::TopKEigen(m, _) => {
                    let sp = node.spectrum.as_ref().expect("recorded with spectrum");
                    let (coeff, _) = cluster_weights(&sp.values, g.as_slice().expect("column"));
                    let u = sp.vectors.as_ref().expect("vectors kept");
                    let scaled = u * &Array2::from_shape_fn((1, coeff.len()), |(_, j)| coeff[j]);
                    send(*m, scaled.dot(&u.t()));
                }
                Op::LaplacianSpectrum { z, weights, .. } => {
                    let sp = node.spectrum.as_ref().expect("recorded with spectrum");
                    let zv = val(z);
                    let (coeff, _) = cluster_weights(&sp.values, g.as_slice().expect("column"));
                    let u = sp.vectors.as_ref().expect("vectors kept");
                    let mut dz = Array2::zeros(zv.dim());
                    for (c, uj) in coeff.iter().zip(u.columns()) {
                        if *c == 0.0 {
                            continue;
                        }
                        // ∂λ/∂z_k = Σ_b w_kb z_b (u_k − u_b)²
                        for (a, b, w) in weights.iter() {
                            let d = uj[a] - uj[b];
                            dz[[a, 0]] += c * w * zv[[b, 0]] * d * d;
                        }
                    }
                    send(*z, dz);
                }
                Op::GramSpectrum { z, x, .. } => {
                    let sp = node.spectrum.as_ref().expect("recorded with spectrum");
                    let zv = val(z);
                    let (coeff, _) = cluster_weights(&sp.values, g.as_slice().expect("column"));
                    let u = sp.vectors.as_ref().expect("vectors kept");
                    let mut dz = Array2::zeros(zv.dim());
                    for (c, uj) in coeff.iter().zip(u.columns()) {
                        if *c == 0.0 {
                            continue;
                        }
                        // ∂λ/∂z_j = (x_jᵀ u)²
                        for r in 0..x.n_rows() {
                            let (cols, vals) = x.row(r);
                            let p: f64 = cols.iter().zip(vals).map(|(&k, &v)| v * uj[k]).sum();
                            dz[[r, 0]] += c * p * p;
                        }
                    }
                    send(*z, dz);
                }
            }
        }

        let tensors = out
            .into_iter()
            .zip(&self.slots)
            .map(|(g, shape)| match (g, shape) {
                (Some(g), _) => g,
                (None, Some(shape)) => Array2::zeros(*shape),
                (None, None) => Array2::zeros((0, 0)),
            })
            .collect::<Vec<_>>();
        if tensors.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NumericOverflow("gradient".into()));
        }
        Ok(Gradients { tensors })
    }
}

fn spectrum_degenerate(op: &Op<'_>, sp: &Spectrum) -> bool {
    let k = match op {
        Op::TopKEigen(_, k) | Op::LaplacianSpectrum { k, .. } | Op::GramSpectrum { k, .. } => *k,
        _ => return false,
    };
    cluster_weights(&sp.values, &vec![1.0; k]).1
}

fn abs_sums(m: &Array2<f64>, axis: Axis) -> Vec<f64> {
    m.map_axis(axis, |l| l.iter().map(|v| v.abs()).sum()).to_vec()
}

fn inv_sqrt(s: f64) -> f64 {
    if s > 0.0 {
        1.0 / s.sqrt()
    } else {
        0.0
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Top-`k` eigenpairs of the masked Laplacian (zₐ z_b w_ab) + shift·I.
pub fn laplacian_spectrum(weights: &CsrMatrix, z: &[f64], shift: f64, k: usize) -> Result<Spectrum> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    top_k_operator(&MaskedLaplacian::new(weights, z, shift), k, true)
}

/// Top-`k` eigenpairs of Xᵀ diag(z) X + shift·I.
pub fn gram_spectrum(x: &CsrMatrix, z: &[f64], shift: f64, k: usize) -> Result<Spectrum> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    top_k_operator(&MaskedGram::new(x, z, shift), k, true)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Per tensor: ‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞).
    pub max_rel_error: Vec<f64>,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare analytic gradients with central differences.
///
/// `loss_fn` returns the loss and its analytic gradient per tensor. It is
/// evaluated twice at `params` first; any difference aborts the check.
pub fn grad_check<F>(loss_fn: F, params: &[Array2<f64>], epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)>,
{
    let (l1, g1) = loss_fn(params)?;
    let (l2, g2) = loss_fn(params)?;
    let mut drift = (l1 - l2).abs();
    for (a, b) in g1.iter().zip(&g2) {
        for (x, y) in a.iter().zip(b.iter()) {
            drift = drift.max((x - y).abs());
        }
    }
    if drift != 0.0 || l1.to_bits() != l2.to_bits() {
        return Err(Error::NonDeterministic(drift));
    }
    if g1.len() != params.len() || g1.iter().zip(params).any(|(g, p)| g.dim() != p.dim()) {
        return Err(Error::Shape("analytic gradients do not match parameter shapes".into()));
    }

    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let mut numeric = Array2::zeros(params[t].dim());
        for idx in 0..params[t].len() {
            let (r, c) = (idx / params[t].ncols(), idx % params[t].ncols());
            let orig = params[t][[r, c]];
            work[t][[r, c]] = orig + epsilon;
            let (plus, _) = loss_fn(&work)?;
            work[t][[r, c]] = orig - epsilon;
            let (minus, _) = loss_fn(&work)?;
            work[t][[r, c]] = orig;
            numeric[[r, c]] = (plus - minus) / (2.0 * epsilon);
        }
        let diff = g1[t]
            .iter()
            .zip(numeric.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let scale = g1[t]
            .iter()
            .chain(numeric.iter())
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        max_rel_error.push(if scale > 1e-12 { diff / scale } else { diff });
    }
    let worst = max_rel_error.iter().copied().fold(0.0f64, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        tolerance,
        passed: worst < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let w = array![[1.0, -2.0], [3.0, 0.5]];
        let mut tape = Tape::new();
        let v = tape.param(0, &w);
        let n = tape.norm2(v).unwrap();
        // ½‖W‖² = ½ n²; build n² as n·n via matmul of 1×1
        let sq = tape.matmul(n, n).unwrap();
        let loss = tape.scale(sq, 0.5).unwrap();
        let g = tape.backward(loss).unwrap();
        for (a, b) in g.tensors[0].iter().zip(w.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_penalty_gradient_is_constant() {
        let z = Array2::from_elem((5, 1), 0.3);
        let mut tape = Tape::new();
        let v = tape.param(0, &z);
        let s = tape.sum(v).unwrap();
        let loss = tape.scale(s, 0.5 / 5.0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.tensors[0].iter().all(|&x| x == 0.1));
    }

    #[test]
    fn replay_is_bit_identical() {
        let a = array![[0.2, -1.0], [0.7, 0.1]];
        let mut tape = Tape::new();
        let v = tape.param(0, &a);
        let t = tape.transpose(v).unwrap();
        let m = tape.matmul(v, t).unwrap();
        let h = tape.activation(m, Activation::Tanh).unwrap();
        let e = tape.top_k_eigen(h, 1).unwrap();
        tape.sum(e).unwrap();
        let replayed = tape.replay().unwrap();
        for (x, y) in tape.values().into_iter().zip(&replayed) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn flatten_is_row_major() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0]];
        let mut tape = Tape::new();
        let va = tape.constant(a);
        let vb = tape.constant(b);
        let f = tape.flatten(&[va, vb]).unwrap();
        assert_eq!(tape.value(f).column(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Array2::zeros((2, 3));
        let mut tape = Tape::new();
        let v = tape.constant(a);
        assert!(matches!(tape.matmul(v, v), Err(Error::Shape(_))));
        let s = tape.sum(v).unwrap();
        assert!(tape.backward(v).is_err());
        assert!(tape.backward(s).is_ok());
    }

    #[test]
    fn grad_check_quadratic() {
        let p = vec![array![[0.5, -1.5, 2.0]]];
        let report = grad_check(
            |ps| {
                let x = &ps[0];
                let loss = x.iter().map(|v| v * v * 1.5).sum();
                Ok((loss, vec![x * 3.0]))
            },
            &p,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn grad_check_detects_nondeterminism() {
        let counter = std::cell::Cell::new(0.0);
        let p = vec![array![[1.0]]];
        let res = grad_check(
            |ps| {
                counter.set(counter.get() + 1.0);
                Ok((ps[0][[0, 0]] + counter.get(), vec![array![[1.0]]]))
            },
            &p,
            1e-6,
            1e-6,
        );
        assert!(matches!(res, Err(Error::NonDeterministic(_))));
    }
}
