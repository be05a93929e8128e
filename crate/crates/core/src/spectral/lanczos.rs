//! Lanczos iteration with full reorthogonalization for the top of a symmetric
//! spectrum.
//!
//! Ritz values converge from the extremes inward; the iteration stops once the
//! residual bound |β_m s_{m,i}| of every requested pair falls below
//! `tol · max(1, |θ₁|)`. A breakdown (invariant Krylov subspace) restarts from
//! a fresh vector orthogonal to the basis so repeated eigenvalues of
//! disconnected operators are still found.
//!
//! Tight clusters at the top of the spectrum converge slowly. Past a soft
//! basis size the residual tolerance is relaxed to `RELAXED_TOL`, and past a
//! hard size to `LAST_TOL`; the residual still bounds each eigenvalue error.
//! If even that fails within one more probe block the operator is densified
//! and solved directly.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Spectrum, SymmetricOperator};

const START_SEED: u64 = 0x05ee_d1a2_c705;
const CHECK_EVERY: usize = 8;
/// Residual tolerance (relative to the largest Ritz value) once the basis
/// passes the soft limit.
pub const RELAXED_TOL: f64 = 1e-8;
/// Residual tolerance once the basis passes the hard limit.
pub const LAST_TOL: f64 = 1e-6;

fn soft_limit(k: usize, n: usize) -> usize {
    (4 * k + 64).min(n)
}

fn hard_limit(k: usize, n: usize) -> usize {
    (4 * soft_limit(k, n)).max(400).min(n)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in basis {
            let p = dot(w, q);
            axpy(-p, q, w);
        }
    }
}

/// Fresh unit vector orthogonal to `basis`, or `None` if the basis spans everything.
fn fresh_direction(rng: &mut ChaCha8Rng, n: usize, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..4 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(&mut v, basis);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            return Some(v);
        }
    }
    None
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    SymmetricEigen::new(t)
}

/// Top-`k` eigenpairs of `op` by Lanczos. `tol` is relative to the largest
/// Ritz value magnitude.
pub fn lanczos_top_k(op: &dyn SymmetricOperator, k: usize, with_vectors: bool, tol: f64) -> Spectrum {
    let n = op.dim();
    assert!(k >= 1 && k <= n, "k={k} outside 1..={n}");
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    // beta[j] couples basis[j] and basis[j + 1]; zero marks a restart
    let mut beta: Vec<f64> = Vec::new();

    let mut q = fresh_direction(&mut rng, n, &basis).expect("n >= 1");
    let mut w = vec![0.0; n];
    let mut scale = 0.0f64;
    // top-k accepted before the current probe block started
    let mut accepted: Option<Vec<f64>> = None;
    let mut block_start = 0;
    let mut next_check = k.max(CHECK_EVERY);
    let (soft, hard) = (soft_limit(k, n), hard_limit(k, n));

    loop {
        op.apply(&q, &mut w);
        let a = dot(&w, &q);
        axpy(-a, &q, &mut w);
        if let (Some(&b), Some(prev)) = (beta.last(), basis.last()) {
            axpy(-b, prev, &mut w);
        }
        basis.push(q);
        alpha.push(a);
        orthogonalize(&mut w, &basis);
        let b = dot(&w, &w).sqrt();
        scale = scale.max(a.abs()).max(b);
        let m = basis.len();

        let breakdown = b <= 1e-12 * scale.max(1e-300);
        let full = m == n;
        if !full && m > hard + CHECK_EVERY.max(k) {
            return dense_top_k(op, k, with_vectors);
        }
        let block_len = m - block_start;
        // a breakdown ends a block early; near-multiples of the identity break
        // down at every step, so the schedule still applies
        let check = full || (m >= k && m >= next_check && (breakdown || block_len >= k.min(CHECK_EVERY)));
        if check {
            // checks thin out geometrically so the tridiagonal solves stay cheap
            next_check = if m < hard {
                (m + CHECK_EVERY.max(m / 8)).min(hard)
            } else {
                m + k.min(CHECK_EVERY)
            };
            let stable_tol = 1e3 * tol;
            let tol = if m >= hard {
                tol.max(LAST_TOL)
            } else if m >= soft {
                tol.max(RELAXED_TOL)
            } else {
                tol
            };
            let stable_tol = stable_tol.max(tol);
            let eig = tridiagonal_eigen(&alpha, &beta);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
            let top = &order[..k];
            let theta_max = top.iter().map(|&i| eig.eigenvalues[i].abs()).fold(1.0f64, f64::max);
            let converged = full
                || top.iter().all(|&i| {
                    let last = eig.eigenvectors[(m - 1, i)];
                    (b * last).abs() <= tol * theta_max
                });
            let values: Vec<f64> = top.iter().map(|&i| eig.eigenvalues[i]).collect();
            // A single Krylov sequence sees one copy of each repeated
            // eigenvalue, so after convergence a probe block started from a
            // vector orthogonal to the basis must leave the top-k unchanged.
            let stable = full
                || accepted.as_ref().is_some_and(|prev| {
                    prev.iter()
                        .zip(&values)
                        .all(|(p, v)| (p - v).abs() <= stable_tol * theta_max)
                });
            if converged && stable {
                let vectors = with_vectors.then(|| {
                    let mut v = Array2::<f64>::zeros((n, k));
                    for (col, &i) in top.iter().enumerate() {
                        for (j, qj) in basis.iter().enumerate() {
                            let s = eig.eigenvectors[(j, i)];
                            if s != 0.0 {
                                for (r, &x) in qj.iter().enumerate() {
                                    v[[r, col]] += s * x;
                                }
                            }
                        }
                        let norm = v.column(col).dot(&v.column(col)).sqrt();
                        v.column_mut(col).mapv_inplace(|x| x / norm);
                    }
                    v
                });
                return Spectrum { values, vectors };
            }
            if converged {
                accepted = Some(values);
                match fresh_direction(&mut rng, n, &basis) {
                    Some(next) => {
                        beta.push(0.0);
                        q = next;
                        block_start = m;
                        continue;
                    }
                    None => unreachable!("basis spans the space only when m == n"),
                }
            }
        }

        if breakdown {
            match fresh_direction(&mut rng, n, &basis) {
                Some(next) => {
                    beta.push(0.0);
                    q = next;
                    block_start = m;
                }
                None => unreachable!("basis spans the space only when m == n"),
            }
        } else {
            beta.push(b);
            q = w.iter().map(|x| x / b).collect();
        }
    }
}

fn dense_top_k(op: &dyn SymmetricOperator, k: usize, with_vectors: bool) -> Spectrum {
    let (values, vectors) = super::full_eigen(&op.to_dense());
    Spectrum {
        values: values[..k].to_vec(),
        vectors: with_vectors.then(|| vectors.slice(ndarray::s![.., ..k]).to_owned()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DenseOperator;
    use ndarray::Array2;

    #[test]
    fn diagonal_operator_top_values() {
        let d = Array2::from_diag(&ndarray::arr1(&[1.0, 5.0, 3.0, 4.0, 2.0]));
        let op = DenseOperator(&d);
        let s = lanczos_top_k(&op, 3, true, 1e-12);
        for (got, want) in s.values.iter().zip([5.0, 4.0, 3.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        let v = s.vectors.unwrap();
        assert!((v[[1, 0]].abs() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn repeated_eigenvalue_found_after_restart() {
        // two disconnected identical blocks: every eigenvalue is doubled
        let mut m = Array2::zeros((4, 4));
        for b in [0, 2] {
            m[[b, b]] = 2.0;
            m[[b + 1, b + 1]] = 2.0;
            m[[b, b + 1]] = -1.0;
            m[[b + 1, b]] = -1.0;
        }
        let s = lanczos_top_k(&DenseOperator(&m), 2, false, 1e-12);
        assert!((s.values[0] - 3.0).abs() < 1e-10);
        assert!((s.values[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn tight_cluster_at_the_top_terminates() {
        // 600 eigenvalues within 1e-10 of 1 above a spread-out tail
        let n = 800;
        let d: Vec<f64> = (0..n)
            .map(|i| {
                if i < 600 {
                    1.0 + 1e-10 * (i as f64 / 600.0)
                } else {
                    (i - 600) as f64 / 400.0
                }
            })
            .collect();
        let m = Array2::from_diag(&ndarray::Array1::from(d));
        let s = lanczos_top_k(&DenseOperator(&m), 11, true, 1e-11);
        for v in &s.values {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }
}
