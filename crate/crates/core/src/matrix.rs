//! Minimal dense row-major matrix.
//!
//! Dimensions here are tiny (batch size × batch size, feature × embedding),
//! and bit-reproducibility mandates explicit ascending-index accumulation, so
//! a hand-rolled type beats pulling in a linear-algebra crate.

use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "from_rows: ragged input");
        Self {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
        }
    }

    /// Builds entry (i, j) from `f`, row-major order.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn add_at(&mut self, i: usize, j: usize, v: S) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[S] {
        debug_assert!(i < self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        debug_assert!(i < self.rows);
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Row-major view of the underlying storage.
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Vector-matrix product `v · M` for a row vector `v` of length `rows`.
    /// Accumulates over the row index in ascending order.
    pub fn vecmat(&self, v: &[S]) -> Vec<S> {
        assert_eq!(v.len(), self.rows, "vecmat: dimension mismatch");
        let mut out = vec![S::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            let row = self.row(i);
            for (o, &r) in out.iter_mut().zip(row) {
                *o += vi * r;
            }
        }
        out
    }

    /// Column-wise mean of all rows, ascending row order.
    pub fn mean_row(&self) -> Vec<S> {
        assert!(self.rows > 0, "mean_row: empty matrix");
        let mut out = vec![S::zero(); self.cols];
        for row in self.rows_iter() {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += r;
            }
        }
        let n = S::from_usize(self.rows).expect("row count fits scalar");
        for o in out.iter_mut() {
            *o /= n;
        }
        out
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.data.iter()
    }
}

/// Row-by-row dot products are common enough to warrant a helper.
pub fn row_dot<S: Scalar>(m: &Matrix<S>, i: usize, j: usize) -> S {
    dot(m.row(i), m.row(j))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vecmat_matches_hand_computation() {
        // [1 2] · [[1, 0, 2], [3, 1, 0]] = [7, 2, 2]
        let m = Matrix::from_rows(vec![vec![1.0, 0.0, 2.0], vec![3.0, 1.0, 0.0]]);
        assert_eq!(m.vecmat(&[1.0, 2.0]), vec![7.0, 2.0, 2.0]);
    }

    #[test]
    fn mean_row_is_columnwise() {
        let m = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(m.mean_row(), vec![0.5, 0.5]);
    }

    #[test]
    #[should_panic(expected = "ragged")]
    fn ragged_rows_rejected() {
        let _ = Matrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]]);
    }
}
