//! MKL-style elementwise vector kernels: `op(size, inputs.., out)` writes
//! `size` results into `out`, which may be one of the inputs.
//!
//! [`raw`] holds the pointer kernels the runtime calls on split pieces; the
//! safe functions here lock the arrays' stores and check lengths first.

use thiserror::Error;

use crate::scalar::{Real, Scalar};
use crate::storage::{with_locks, DenseArray};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmlError {
    #[error("size {size} exceeds an array of length {len}")]
    Length { size: usize, len: usize },
    #[error("negative size {0}")]
    NegativeSize(i64),
}

pub mod raw {
    //! Kernels over raw pointers.
    //!
    //! # Safety
    //! Every input must be valid for `n` reads and `out` for `n` writes,
    //! with no other thread writing those elements during the call. `out`
    //! may equal an input; partial overlaps are processed front to back.

    use crate::scalar::{Real, Scalar};

    #[inline(always)]
    fn apart<T>(p: *const T, q: *const T, n: usize) -> bool {
        let (p, q) = (p as usize, q as usize);
        let bytes = n * std::mem::size_of::<T>();
        p + bytes <= q || q + bytes <= p
    }

    /// # Safety
    /// See the module documentation.
    #[inline(always)]
    pub unsafe fn unary<T: Copy>(n: usize, a: *const T, out: *mut T, f: impl Fn(T) -> T) {
        if a == out as *const T {
            let o = std::slice::from_raw_parts_mut(out, n);
            for x in o.iter_mut() {
                *x = f(*x);
            }
        } else if apart(a, out, n) {
            let a = std::slice::from_raw_parts(a, n);
            let o = std::slice::from_raw_parts_mut(out, n);
            for (x, y) in o.iter_mut().zip(a) {
                *x = f(*y);
            }
        } else {
            for i in 0..n {
                *out.add(i) = f(*a.add(i));
            }
        }
    }

    /// # Safety
    /// See the module documentation.
    #[inline(always)]
    pub unsafe fn binary<T: Copy>(n: usize, a: *const T, b: *const T, out: *mut T, f: impl Fn(T, T) -> T) {
        let o = out as *const T;
        if apart(a, o, n) && apart(b, o, n) {
            let (a, b) = (std::slice::from_raw_parts(a, n), std::slice::from_raw_parts(b, n));
            let out = std::slice::from_raw_parts_mut(out, n);
            for ((x, y), z) in out.iter_mut().zip(a).zip(b) {
                *x = f(*y, *z);
            }
        } else if a == o && b == o {
            let out = std::slice::from_raw_parts_mut(out, n);
            for x in out.iter_mut() {
                *x = f(*x, *x);
            }
        } else if a == o && apart(b, o, n) {
            let b = std::slice::from_raw_parts(b, n);
            let out = std::slice::from_raw_parts_mut(out, n);
            for (x, z) in out.iter_mut().zip(b) {
                *x = f(*x, *z);
            }
        } else if b == o && apart(a, o, n) {
            let a = std::slice::from_raw_parts(a, n);
            let out = std::slice::from_raw_parts_mut(out, n);
            for (x, y) in out.iter_mut().zip(a) {
                *x = f(*y, *x);
            }
        } else {
            for i in 0..n {
                *out.add(i) = f(*a.add(i), *b.add(i));
            }
        }
    }

    macro_rules! binary_kernel {
        ($($name:ident => $op:ident),*) => {$(
            /// # Safety
            /// See the module documentation.
            pub unsafe fn $name<T: Scalar>(n: usize, a: *const T, b: *const T, out: *mut T) {
                binary(n, a, b, out, T::$op)
            }
        )*};
    }
    binary_kernel!(add => k_add, sub => k_sub, mul => k_mul, div => k_div);

    macro_rules! real_kernel {
        ($($name:ident => $f:expr),*) => {$(
            /// # Safety
            /// See the module documentation.
            pub unsafe fn $name<T: Real>(n: usize, a: *const T, out: *mut T) {
                unary(n, a, out, $f)
            }
        )*};
    }
    real_kernel!(
        sqrt => |x: T| x.sqrt(),
        log1p => |x: T| x.ln_1p(),
        exp => |x: T| x.exp(),
        erf => |x: T| Real::erf(x),
        sin => |x: T| x.sin(),
        cos => |x: T| x.cos(),
        asin => |x: T| x.asin()
    );

    /// `out = a * scale + shift`.
    ///
    /// # Safety
    /// See the module documentation.
    pub unsafe fn linear<T: Scalar>(n: usize, a: *const T, scale: T, shift: T, out: *mut T) {
        unary(n, a, out, |x| x.k_mul(scale).k_add(shift))
    }
}

fn check<T: Scalar>(size: usize, arrays: &[&DenseArray<T>]) -> Result<(), VmlError> {
    match arrays.iter().find(|a| a.len() < size) {
        Some(a) => Err(VmlError::Length { size, len: a.len() }),
        None => Ok(()),
    }
}

fn run_binary<T: Scalar>(
    size: usize,
    a: &DenseArray<T>,
    b: &DenseArray<T>,
    out: &DenseArray<T>,
    k: unsafe fn(usize, *const T, *const T, *mut T),
) -> Result<(), VmlError> {
    check(size, &[a, b, out])?;
    // SAFETY: lengths checked; the locks keep other threads out.
    with_locks(&[a.lock(), b.lock()], &[out.lock()], || unsafe { k(size, a.ptr(), b.ptr(), out.ptr()) });
    Ok(())
}

fn run_unary<T: Scalar>(
    size: usize,
    a: &DenseArray<T>,
    out: &DenseArray<T>,
    k: unsafe fn(usize, *const T, *mut T),
) -> Result<(), VmlError> {
    check(size, &[a, out])?;
    // SAFETY: as in `run_binary`.
    with_locks(&[a.lock()], &[out.lock()], || unsafe { k(size, a.ptr(), out.ptr()) });
    Ok(())
}

pub fn add<T: Scalar>(size: usize, a: &DenseArray<T>, b: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_binary(size, a, b, out, raw::add::<T>)
}

pub fn sub<T: Scalar>(size: usize, a: &DenseArray<T>, b: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_binary(size, a, b, out, raw::sub::<T>)
}

pub fn mul<T: Scalar>(size: usize, a: &DenseArray<T>, b: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_binary(size, a, b, out, raw::mul::<T>)
}

pub fn div<T: Scalar>(size: usize, a: &DenseArray<T>, b: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_binary(size, a, b, out, raw::div::<T>)
}

pub fn sqrt<T: Real>(size: usize, a: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_unary(size, a, out, raw::sqrt::<T>)
}

pub fn log1p<T: Real>(size: usize, a: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_unary(size, a, out, raw::log1p::<T>)
}

pub fn exp<T: Real>(size: usize, a: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_unary(size, a, out, raw::exp::<T>)
}

pub fn erf<T: Real>(size: usize, a: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_unary(size, a, out, raw::erf::<T>)
}

pub fn sin<T: Real>(size: usize, a: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_unary(size, a, out, raw::sin::<T>)
}

pub fn cos<T: Real>(size: usize, a: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_unary(size, a, out, raw::cos::<T>)
}

pub fn asin<T: Real>(size: usize, a: &DenseArray<T>, out: &DenseArray<T>) -> Result<(), VmlError> {
    run_unary(size, a, out, raw::asin::<T>)
}

pub fn linear<T: Scalar>(size: usize, a: &DenseArray<T>, scale: T, shift: T, out: &DenseArray<T>) -> Result<(), VmlError> {
    check(size, &[a, out])?;
    // SAFETY: as in `run_binary`.
    with_locks(&[a.lock()], &[out.lock()], || unsafe { raw::linear(size, a.ptr(), scale, shift, out.ptr()) });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_examples() {
        let out = DenseArray::zeros(3);
        add(3, &DenseArray::new(vec![1.0, 2.0, 3.0]), &DenseArray::new(vec![4.0, 5.0, 6.0]), &out).unwrap();
        assert_eq!(out.to_vec(), vec![5.0, 7.0, 9.0]);
        let out = DenseArray::new(vec![7.0]);
        log1p(1, &DenseArray::new(vec![0.0]), &out).unwrap();
        assert_eq!(out.to_vec(), vec![0.0]);
    }

    #[test]
    fn in_place_and_aliasing() {
        let d = DenseArray::new(vec![1.0f64, 2.0, 3.0]);
        log1p(3, &d, &d).unwrap();
        assert_eq!(d.to_vec(), vec![1f64.ln_1p(), 2f64.ln_1p(), 3f64.ln_1p()]);
        let x = DenseArray::new(vec![1i64, 2, 3]);
        mul(3, &x, &x, &x).unwrap();
        assert_eq!(x.to_vec(), vec![1, 4, 9]);
        let y = DenseArray::new(vec![10i64, 20, 30]);
        sub(3, &y, &x, &x).unwrap();
        assert_eq!(x.to_vec(), vec![9, 16, 21]);
    }

    #[test]
    fn partial_overlap_runs_front_to_back() {
        let s = DenseArray::new(vec![1i64, 2, 3, 4]);
        let (a, out) = (s.view(0, 3), s.view(1, 3));
        linear(3, &a, 1, 0, &out).unwrap();
        assert_eq!(s.to_vec(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn only_size_elements_are_written() {
        let out = DenseArray::new(vec![0i64; 4]);
        add(2, &DenseArray::new(vec![1, 1, 1, 1]), &DenseArray::new(vec![2, 2, 2, 2]), &out).unwrap();
        assert_eq!(out.to_vec(), vec![3, 3, 0, 0]);
        assert_eq!(add(5, &out, &out, &out), Err(VmlError::Length { size: 5, len: 4 }));
    }

    #[test]
    fn integer_division_by_zero_is_zero() {
        let out = DenseArray::zeros(2);
        div(2, &DenseArray::new(vec![7i64, 8]), &DenseArray::new(vec![0, 2]), &out).unwrap();
        assert_eq!(out.to_vec(), vec![0, 4]);
    }
}
