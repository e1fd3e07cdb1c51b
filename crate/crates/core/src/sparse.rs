//! Compressed sparse row storage for assembled operators.

use crate::scalar::Real;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        let mut cursor = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(r, c, v) in triplets {
            let k = cursor[r];
            cols[k] = c;
            vals[k] = v;
            cursor[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, T)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = row[k].1;
                k += 1;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    /// Position of entry `(r, c)` in the value array, if it is stored.
    pub fn slot(&self, r: usize, c: usize) -> Option<usize> {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b].binary_search(&c).ok().map(|k| a + k)
    }

    /// Stored values in row-major order; the sparsity pattern is fixed.
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    #[inline]
    fn row_dot(&self, a: usize, b: usize, x: &[T]) -> T {
        let mut acc = T::zero();
        for (c, v) in self.indices[a..b].iter().zip(&self.values[a..b]) {
            acc += *v * x[*c];
        }
        acc
    }

    /// `y = A x`
    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (yr, w) in y.iter_mut().zip(self.indptr.windows(2)) {
            *yr = self.row_dot(w[0], w[1], x);
        }
    }

    /// `y += alpha A x`
    pub fn matvec_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        for (yr, w) in y.iter_mut().zip(self.indptr.windows(2)) {
            *yr += alpha * self.row_dot(w[0], w[1], x);
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `A^T x` without forming the transpose.
    pub fn transpose_matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.ncols];
        self.transpose_matvec_into(x, &mut y);
        y
    }

    /// `y = A^T x`
    pub fn transpose_matvec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = T::zero());
        for (xr, w) in x.iter().zip(self.indptr.windows(2)) {
            for (c, v) in self.indices[w[0]..w[1]].iter().zip(&self.values[w[0]..w[1]]) {
                y[*c] += *v * *xr;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                trip.push((self.indices[k], r, self.values[k]));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &trip)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn scaled(&self, alpha: T) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= alpha;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for k in self.indptr[r]..self.indptr[r + 1] {
                row[self.indices[k]] += self.values[k];
            }
        }
        d
    }

    /// Largest asymmetry `|A_ij - A_ji|` (square matrices only).
    pub fn max_asymmetry(&self) -> T {
        assert_eq!(self.nrows, self.ncols);
        let mut worst = T::zero();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((*v - self.get(*c, r)).abs());
            }
        }
        worst
    }

    /// Dense textual dump, one row per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for row in self.to_dense() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_transpose() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (1, 0, 2.0), (0, 2, 0.5), (0, 0, -1.0)]);
        assert_eq!(a.get(0, 2), 1.5);
        assert_eq!(a.nnz(), 3);
        let x = [1.0, 2.0, 3.0];
        assert_eq!(a.matvec(&x), vec![3.5, 2.0]);
        let t = a.transpose();
        assert_eq!(t.matvec(&[1.0, 1.0]), a.transpose_matvec(&[1.0, 1.0]));
        assert_eq!(t.to_dense()[2][0], 1.5);
    }

    #[test]
    fn diagonal_matrix() {
        let d = CsrMatrix::from_diagonal(&[1.0, 2.0]);
        assert_eq!(d.matvec(&[3.0, 4.0]), vec![3.0, 8.0]);
        assert_eq!(d.max_asymmetry(), 0.0);
        assert!(d.dump().lines().count() == 2);
    }
}
