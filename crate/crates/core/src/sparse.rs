//! Compressed sparse row storage for the few sparse products the pipeline needs.

use ndarray::{Array2, ArrayView2};

/// Row-compressed real matrix. Column indices within a row are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicate coordinates are summed
    /// and explicit zeros are kept out.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (r, c, v) in triplets {
            debug_assert!(r < n_rows && c < n_cols);
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &Array2<f64>) -> Self {
        let (r, c) = m.dim();
        Self::from_triplets(
            r,
            c,
            m.indexed_iter()
                .filter(|(_, &v)| v != 0.0)
                .map(|((i, j), &v)| (i, j, v)),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// y = M x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *out = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// y = Mᵀ x
    pub fn mul_vec_transposed(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(y.len(), self.n_cols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.n_cols, self.n_rows, self.iter().map(|(i, j, v)| (j, i, v)))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (i, j, v) in self.iter() {
            out[[i, j]] = v;
        }
        out
    }

    /// M · B for a dense right-hand side.
    pub fn mul_dense(&self, b: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(b.nrows(), self.n_cols);
        let mut out = Array2::zeros((self.n_rows, b.ncols()));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut row = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row.scaled_add(v, &b.row(j));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = CsrMatrix::from_triplets(2, 3, [(0, 2, 1.0), (0, 2, 2.0), (1, 0, 0.0), (1, 1, -1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), array![[0.0, 0.0, 3.0], [0.0, -1.0, 0.0]]);
    }

    #[test]
    fn products_match_dense() {
        let d = array![[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]];
        let m = CsrMatrix::from_dense(&d);
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 2];
        m.mul_vec(&x, &mut y);
        assert_eq!(y, [7.0, 6.0]);
        let mut yt = [0.0; 3];
        m.mul_vec_transposed(&[1.0, 1.0], &mut yt);
        assert_eq!(yt, [1.0, 3.0, 2.0]);
        let b = array![[1.0], [1.0], [1.0]];
        assert_eq!(m.mul_dense(b.view()), d.dot(&b));
        assert_eq!(m.transpose().to_dense(), d.t().to_owned());
    }
}
