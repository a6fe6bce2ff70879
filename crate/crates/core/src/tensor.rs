//! Row-major matrices and the handful of dense kernels the model needs.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::{axpy, gemm, Real, View, ViewMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    /// Copies rows `lo..hi`.
    pub fn rows_slice(&self, lo: usize, hi: usize) -> Mat<T> {
        Mat::from_vec(hi - lo, self.cols, self.data[lo * self.cols..hi * self.cols].to_vec())
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, other.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Mat::from_vec(self.rows + other.rows, self.cols, data)
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(T::zero());
    }
}

/// `out (m x n) = a (m x k) * b (k x n) + bias`
pub fn linear<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize, bias: Option<&[T]>, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let beta = match bias {
        Some(bv) => {
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bv);
            }
            T::one()
        }
        None => T::zero(),
    };
    gemm((m, k, n), T::one(), View::rows(a, k), View::rows(b, n), beta, ViewMut::rows(out, n));
}

/// Backward of [`linear`]: accumulates `db += a^T dout`, `dbias += sum(dout)` and
/// (when requested) `da += dout b^T`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    a: &[T],
    m: usize,
    k: usize,
    b: &[T],
    n: usize,
    dout: &[T],
    db: &mut [T],
    dbias: Option<&mut [T]>,
    da: Option<&mut [T]>,
) {
    gemm((k, m, n), T::one(), View::cols(a, k), View::rows(dout, n), T::one(), ViewMut::rows(db, n));
    if let Some(dbias) = dbias {
        for row in dout.chunks_exact(n) {
            axpy(dbias, T::one(), row);
        }
    }
    if let Some(da) = da {
        gemm((m, n, k), T::one(), View::rows(dout, n), View::cols(b, n), T::one(), ViewMut::rows(da, k));
    }
}
