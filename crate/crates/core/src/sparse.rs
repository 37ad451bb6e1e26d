//! Compressed sparse row matrices for graph operators.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-compressed sparse matrix. Column indices are sorted within each row
/// and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed; explicit zeros are kept.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::Structure(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` over the stored entries of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => T::zero(),
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] += v;
            }
        }
        out
    }

    /// Returns `alpha * self + beta * I`. Requires a square matrix.
    pub fn affine_identity(&self, alpha: T, beta: T) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::shape("affine_identity needs a square matrix"));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + self.rows);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                triplets.push((r, c, alpha * v));
            }
            triplets.push((r, r, beta));
        }
        Self::from_triplets(self.rows, self.cols, &triplets)
    }

    /// `out += alpha * self * x` where `x` is row-major `cols x width`.
    pub fn mul_dense_acc(&self, alpha: T, x: &[T], width: usize, out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols * width);
        debug_assert_eq!(out.len(), self.rows * width);
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let a = alpha * v;
                let src = &x[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * *s;
                }
            }
        }
    }

    /// `out += alpha * selfᵀ * x` where `x` is row-major `rows x width`.
    pub fn mul_transpose_dense_acc(&self, alpha: T, x: &[T], width: usize, out: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows * width);
        debug_assert_eq!(out.len(), self.cols * width);
        for r in 0..self.rows {
            let src = &x[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let a = alpha * v;
                let dst = &mut out[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * *s;
                }
            }
        }
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(blocks: &[&CsrMatrix<T>]) -> Self {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let cols = blocks.iter().map(|b| b.cols).sum();
        let nnz = blocks.iter().map(|b| b.nnz()).sum();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        let mut col_off = 0;
        for b in blocks {
            let base = indices.len();
            for r in 0..b.rows {
                indptr.push(base + b.indptr[r + 1]);
            }
            indices.extend(b.indices.iter().map(|c| c + col_off));
            values.extend_from_slice(&b.values);
            col_off += b.cols;
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn cast<U: Real>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self
                .values
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Symmetric permutation `P A Pᵀ` where `perm[i]` is the new index of
    /// old row/column `i`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<Self> {
        if self.rows != self.cols || perm.len() != self.rows {
            return Err(Error::shape("permutation length does not match matrix"));
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                triplets.push((perm[r], perm[c], v));
            }
        }
        Self::from_triplets(self.rows, self.cols, &triplets)
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let d = (v - self.get(c, r)).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}
