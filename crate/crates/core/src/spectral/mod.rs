//! Symmetric eigensolvers, eigenvalue derivatives, Gershgorin radii,
//! operator norms and effective resistances.

mod lanczos;
mod resistance;

pub use lanczos::lanczos_top_k;
pub(crate) use resistance::undirected_components;
pub use resistance::{effective_resistances, effective_resistances_with_limit};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Dense matrices up to this size are solved by full tridiagonalization;
/// larger ones go through Lanczos.
pub const DENSE_LIMIT: usize = 4000;

/// Implicit operators (masked Laplacians, Gram products) are materialized
/// and solved densely only up to this size.
pub const OPERATOR_DENSE_LIMIT: usize = 512;

/// Residual tolerance for Lanczos, relative to the spectral scale.
pub const LANCZOS_TOL: f64 = 1e-11;

/// Relative eigengap below which two eigenvalues are treated as one cluster.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Leading eigenvalues in descending order, optionally with orthonormal
/// eigenvectors stored column-aligned with `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Option<Array2<f64>>,
}

/// A real symmetric linear map.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    /// y = M x
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        let mut out = Array2::zeros((n, n));
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                out[[i, j]] = col[i];
            }
        }
        out
    }
}

/// Borrowed dense symmetric matrix.
pub struct DenseOperator<'a>(pub &'a Array2<f64>);

impl SymmetricOperator for DenseOperator<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            *out = self.0.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn to_dense(&self) -> Array2<f64> {
        self.0.clone()
    }
}

impl SymmetricOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec(x, y)
    }

    fn to_dense(&self) -> Array2<f64> {
        CsrMatrix::to_dense(self)
    }
}

/// Weighted graph Laplacian D − W + shift·I applied without materializing it.
/// `weights` must be symmetric with an empty diagonal.
pub struct LaplacianOperator<'a> {
    weights: &'a CsrMatrix,
    degree: Vec<f64>,
    shift: f64,
}

impl<'a> LaplacianOperator<'a> {
    pub fn new(weights: &'a CsrMatrix, shift: f64) -> Self {
        let degree = (0..weights.n_rows()).map(|i| weights.row(i).1.iter().sum()).collect();
        Self { weights, degree, shift }
    }
}

impl SymmetricOperator for LaplacianOperator<'_> {
    fn dim(&self) -> usize {
        self.weights.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.weights.row(i);
            let off: f64 = cols.iter().zip(vals).map(|(&j, &w)| w * x[j]).sum();
            *out = (self.degree[i] + self.shift) * x[i] - off;
        }
    }
}

/// Laplacian of the node-weighted graph with edge weights zₐ·z_b·w_ab, plus
/// shift·I. With z all ones this is the Laplacian of `weights` itself.
pub struct MaskedLaplacian<'a> {
    weights: &'a CsrMatrix,
    z: &'a [f64],
    degree: Vec<f64>,
    shift: f64,
}

impl<'a> MaskedLaplacian<'a> {
    pub fn new(weights: &'a CsrMatrix, z: &'a [f64], shift: f64) -> Self {
        let degree = (0..weights.n_rows())
            .map(|i| {
                let (cols, vals) = weights.row(i);
                let s: f64 = cols.iter().zip(vals).map(|(&j, &w)| w * z[j]).sum();
                z[i] * s
            })
            .collect();
        Self {
            weights,
            z,
            degree,
            shift,
        }
    }
}

impl SymmetricOperator for MaskedLaplacian<'_> {
    fn dim(&self) -> usize {
        self.weights.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.weights.row(i);
            let off: f64 = cols.iter().zip(vals).map(|(&j, &w)| w * self.z[j] * x[j]).sum();
            *out = (self.degree[i] + self.shift) * x[i] - self.z[i] * off;
        }
    }
}

/// Xᵀ·diag(z)·X + shift·I for a sparse n×f feature matrix.
pub struct MaskedGram<'a> {
    x: &'a CsrMatrix,
    z: &'a [f64],
    shift: f64,
}

impl<'a> MaskedGram<'a> {
    pub fn new(x: &'a CsrMatrix, z: &'a [f64], shift: f64) -> Self {
        Self { x, z, shift }
    }
}

impl SymmetricOperator for MaskedGram<'_> {
    fn dim(&self) -> usize {
        self.x.n_cols()
    }

    fn apply(&self, v: &[f64], y: &mut [f64]) {
        let mut xv = vec![0.0; self.x.n_rows()];
        self.x.mul_vec(v, &mut xv);
        xv.iter_mut().zip(self.z).for_each(|(a, &z)| *a *= z);
        self.x.mul_vec_transposed(&xv, y);
        y.iter_mut().zip(v).for_each(|(a, &b)| *a += self.shift * b);
    }
}

fn check_input(m: &Array2<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!("expected a square matrix, got {:?}", m.dim())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let asym = m
        .indexed_iter()
        .map(|((i, j), &v)| (v - m[[j, i]]).abs())
        .fold(0.0f64, f64::max);
    if asym > 1e-10 * scale {
        return Err(Error::Asymmetric(asym));
    }
    Ok(())
}

/// Full dense eigendecomposition, eigenpairs sorted by descending eigenvalue.
pub fn full_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// The `k` largest eigenvalues of a symmetric matrix, descending.
pub fn top_k_eigen(m: &Array2<f64>, k: usize, with_vectors: bool) -> Result<Spectrum> {
    check_input(m)?;
    let n = m.nrows();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k={k} outside 1..={n}")));
    }
    if n <= DENSE_LIMIT {
        let (values, vectors) = full_eigen(m);
        Ok(Spectrum {
            values: values[..k].to_vec(),
            vectors: with_vectors.then(|| vectors.slice(ndarray::s![.., ..k]).to_owned()),
        })
    } else {
        let sym = (m + &m.t()) * 0.5;
        Ok(lanczos_top_k(&DenseOperator(&sym), k, with_vectors, LANCZOS_TOL))
    }
}

/// Top-`k` of an implicit operator: dense when small, Lanczos otherwise.
pub fn top_k_operator(op: &dyn SymmetricOperator, k: usize, with_vectors: bool) -> Result<Spectrum> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k={k} outside 1..={n}")));
    }
    if n <= OPERATOR_DENSE_LIMIT {
        let (values, vectors) = full_eigen(&op.to_dense());
        Ok(Spectrum {
            values: values[..k].to_vec(),
            vectors: with_vectors.then(|| vectors.slice(ndarray::s![.., ..k]).to_owned()),
        })
    } else {
        Ok(lanczos_top_k(op, k, with_vectors, LANCZOS_TOL))
    }
}

/// Largest eigenvalue of a symmetric operator (0 for an empty one).
pub fn largest_eigenvalue(op: &dyn SymmetricOperator) -> Result<f64> {
    if op.dim() == 0 {
        return Ok(0.0);
    }
    Ok(top_k_operator(op, 1, false)?.values[0])
}

/// ∂λᵢ/∂M = uᵢuᵢᵀ for a simple eigenvalue λᵢ (index into the descending order).
pub fn eigenvalue_gradient(m: &Array2<f64>, i: usize) -> Result<Array2<f64>> {
    check_input(m)?;
    let n = m.nrows();
    if i >= n {
        return Err(Error::Parameter(format!("eigen index {i} outside 0..{n}")));
    }
    let (values, vectors) = full_eigen(m);
    let tol = DEGENERACY_TOL * values[i].abs().max(1.0);
    let gap = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)]
        .into_iter()
        .flatten()
        .map(|j| (values[i] - values[j]).abs())
        .fold(f64::INFINITY, f64::min);
    if gap < tol {
        return Err(Error::DegenerateSpectrum { index: i, gap });
    }
    let u = vectors.column(i);
    Ok(Array2::from_shape_fn((n, n), |(a, b)| u[a] * u[b]))
}

/// Coefficients cⱼ such that Σ_{i<k} gᵢ·∂λᵢ/∂M ≈ Σⱼ cⱼ uⱼuⱼᵀ under the tie policy:
/// eigenvalues closer than [`DEGENERACY_TOL`] form a cluster and each upstream
/// gradient is spread evenly over its cluster. `values` may extend past `k` so
/// clusters straddling the cut are detected. Returns the coefficients and
/// whether any requested eigenvalue was degenerate.
pub fn cluster_weights(values: &[f64], upstream: &[f64]) -> (Vec<f64>, bool) {
    let k = upstream.len();
    let mut coeff = vec![0.0; values.len()];
    let mut degenerate = false;
    let mut start = 0;
    while start < values.len() && start < k {
        let mut end = start + 1;
        while end < values.len()
            && (values[end - 1] - values[end]).abs() < DEGENERACY_TOL * values[end - 1].abs().max(1.0)
        {
            end += 1;
        }
        let size = end - start;
        if size > 1 {
            degenerate = true;
        }
        let total: f64 = upstream[start..end.min(k)].iter().sum();
        for c in &mut coeff[start..end] {
            *c = total / size as f64;
        }
        start = end;
    }
    (coeff, degenerate)
}

/// Σ_{i≠j} |M_ij|.
pub fn gershgorin_radius(m: &Array2<f64>) -> f64 {
    m.indexed_iter()
        .filter(|((i, j), _)| i != j)
        .map(|(_, v)| v.abs())
        .sum()
}

/// Σ_{i≠j} |M_ij| for a sparse matrix.
pub fn gershgorin_radius_sparse(m: &CsrMatrix) -> f64 {
    m.iter().filter(|(i, j, _)| i != j).map(|(_, _, v)| v.abs()).sum()
}

/// Spectral norm √λ₁(MᵀM).
pub fn operator_norm(m: &Array2<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() >= m.ncols() {
        m.t().dot(m)
    } else {
        m.dot(&m.t())
    };
    let (values, _) = full_eigen(&gram);
    values[0].max(0.0).sqrt()
}
