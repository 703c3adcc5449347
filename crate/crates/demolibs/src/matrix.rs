//! A small matrix library with axis-dependent operations.
//!
//! `axis` 0 means rows and 1 means columns: normalizing along axis 0
//! divides every row by its sum, and summing along axis 0 adds the rows up
//! (giving one value per column), as `numpy.sum(axis=0)` does.

use thiserror::Error;

use crate::scalar::{Real, Scalar};
use crate::storage::{with_locks, DenseArray, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatrixError {
    #[error("dimension mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    DimensionMismatch { left_rows: usize, left_cols: usize, right_rows: usize, right_cols: usize },
    #[error("axis must be 0 or 1, got {0}")]
    BadAxis(i64),
}

fn check_axis(axis: i64) -> Result<usize, MatrixError> {
    match axis {
        0 | 1 => Ok(axis as usize),
        _ => Err(MatrixError::BadAxis(axis)),
    }
}

pub mod unlocked {
    //! The same operations without locking, for callers that already hold
    //! exclusive access to the stores (the executor does, for a stage).
    //!
    //! # Safety
    //! No other thread may write the elements the matrix views cover, and
    //! for the in-place operations none may read them either.

    use super::*;

    #[inline(always)]
    unsafe fn at<T>(m: &DenseMatrix<T>, r: usize, c: usize) -> *mut T
    where
        T: Scalar,
    {
        m.ptr().add(r * m.stride() + c)
    }

    /// # Safety
    /// See the module documentation.
    pub unsafe fn normalize_axis<T: Real>(m: &DenseMatrix<T>, axis: usize) {
        let (rows, cols) = (m.rows(), m.cols());
        let (outer, inner) = if axis == 0 { (rows, cols) } else { (cols, rows) };
        let idx = |o: usize, i: usize| if axis == 0 { (o, i) } else { (i, o) };
        for o in 0..outer {
            let mut sum = T::zero();
            for i in 0..inner {
                let (r, c) = idx(o, i);
                sum = sum + *at(m, r, c);
            }
            if sum != T::zero() {
                for i in 0..inner {
                    let (r, c) = idx(o, i);
                    *at(m, r, c) = *at(m, r, c) / sum;
                }
            }
        }
    }

    /// # Safety
    /// See the module documentation.
    pub unsafe fn add<T: Scalar>(l: &DenseMatrix<T>, r: &DenseMatrix<T>) -> Result<DenseMatrix<T>, MatrixError> {
        if (l.rows(), l.cols()) != (r.rows(), r.cols()) {
            return Err(MatrixError::DimensionMismatch {
                left_rows: l.rows(),
                left_cols: l.cols(),
                right_rows: r.rows(),
                right_cols: r.cols(),
            });
        }
        let mut out = Vec::with_capacity(l.rows() * l.cols());
        for i in 0..l.rows() {
            for j in 0..l.cols() {
                out.push((*at(l, i, j)).k_add(*at(r, i, j)));
            }
        }
        Ok(DenseMatrix::new(l.rows(), l.cols(), out))
    }

    /// # Safety
    /// See the module documentation.
    pub unsafe fn scale<T: Scalar>(m: &DenseMatrix<T>, val: T) {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                *at(m, i, j) = (*at(m, i, j)).k_mul(val);
            }
        }
    }

    /// # Safety
    /// See the module documentation.
    pub unsafe fn filter_zeroed_rows<T: Scalar>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
        let mut kept = Vec::new();
        let mut rows = 0;
        for i in 0..m.rows() {
            let row: Vec<T> = (0..m.cols()).map(|j| *at(m, i, j)).collect();
            if row.iter().any(|x| *x != T::zero()) {
                kept.extend(row);
                rows += 1;
            }
        }
        DenseMatrix::new(rows, m.cols(), kept)
    }

    /// # Safety
    /// See the module documentation.
    pub unsafe fn sum_reduce<T: Scalar>(m: &DenseMatrix<T>, axis: usize) -> DenseArray<T> {
        if axis == 0 {
            let mut acc = vec![T::zero(); m.cols()];
            for i in 0..m.rows() {
                for (j, a) in acc.iter_mut().enumerate() {
                    *a = a.k_add(*at(m, i, j));
                }
            }
            DenseArray::new(acc)
        } else {
            DenseArray::new(
                (0..m.rows()).map(|i| (0..m.cols()).fold(T::zero(), |s, j| s.k_add(*at(m, i, j)))).collect(),
            )
        }
    }
}

/// Divides every row (axis 0) or column (axis 1) by its sum, in place.
/// Rows or columns summing to zero are left as they are.
pub fn normalize_matrix_axis<T: Real>(m: &DenseMatrix<T>, axis: i64) -> Result<(), MatrixError> {
    let axis = check_axis(axis)?;
    // SAFETY: write lock held.
    with_locks(&[], &[m.lock()], || unsafe { unlocked::normalize_axis(m, axis) });
    Ok(())
}

/// Elementwise sum into a new matrix.
pub fn matrix_add<T: Scalar>(l: &DenseMatrix<T>, r: &DenseMatrix<T>) -> Result<DenseMatrix<T>, MatrixError> {
    // SAFETY: read locks held.
    with_locks(&[l.lock(), r.lock()], &[], || unsafe { unlocked::add(l, r) })
}

pub fn scale_matrix<T: Scalar>(m: &DenseMatrix<T>, val: T) {
    // SAFETY: write lock held.
    with_locks(&[], &[m.lock()], || unsafe { unlocked::scale(m, val) })
}

/// Copies the rows that are not entirely zero, keeping their order.
pub fn filter_zeroed_rows<T: Scalar>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    // SAFETY: read lock held.
    with_locks(&[m.lock()], &[], || unsafe { unlocked::filter_zeroed_rows(m) })
}

/// Sums away `axis`: axis 0 gives the column sums, axis 1 the row sums.
pub fn sum_reduce_to_vector<T: Scalar>(m: &DenseMatrix<T>, axis: i64) -> Result<DenseArray<T>, MatrixError> {
    let axis = check_axis(axis)?;
    // SAFETY: read lock held.
    Ok(with_locks(&[m.lock()], &[], || unsafe { unlocked::sum_reduce(m, axis) }))
}
