//! Compressed sparse row storage for the site-basis operators.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{Real, C};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T: Real> {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<C<T>>,
}

impl<T: Real> SparseMatrix<T> {
    /// Assembles from `(row, col, value)` triplets; repeated positions are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C<T>)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<C<T>> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { dim, row_ptr, cols, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.dim)
            .map(|r| self.row_ptr[r + 1] - self.row_ptr[r])
            .max()
            .unwrap_or(0)
    }

    /// Non-zero entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C<T>)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn matvec_into(&self, x: &[C<T>], y: &mut [C<T>]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = C::new(T::zero(), T::zero());
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }

    pub fn matvec(&self, x: &DVector<C<T>>) -> DVector<C<T>> {
        let mut y = DVector::zeros(self.dim);
        self.matvec_into(x.as_slice(), y.as_mut_slice());
        y
    }

    /// `⟨x|A|x⟩`.
    pub fn expectation(&self, x: &DVector<C<T>>) -> C<T> {
        let ax = self.matvec(x);
        x.dotc(&ax)
    }

    /// `a·self + b·other` for two matrices with identical sparsity.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Self {
        assert!(self.row_ptr == other.row_ptr && self.cols == other.cols, "sparsity patterns differ");
        let values = self.values.iter().zip(&other.values).map(|(x, y)| *x * a + *y * b).collect();
        Self { dim: self.dim, row_ptr: self.row_ptr.clone(), cols: self.cols.clone(), values }
    }

    pub fn to_dense(&self) -> DMatrix<C<T>> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}
