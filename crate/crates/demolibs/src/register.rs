//! Registers the demo kinds and annotated functions with a session.
//!
//! Names carry the element type's tag: `vd_add` and `ArraySplit` work on
//! `f64`, `vd_add_f32` and `ArraySplit_f32` on `f32`, and so on.
//!
//! The registered kernels read and write through raw pointers without
//! locking. They rely on the executor, which holds every store a stage
//! touches exclusively and hands each worker disjoint pieces.

use splitann::{Error, FunctionDef, Session, Signature, Value};

use crate::kinds::{
    array_split, array_split_kind, matrix_split, matrix_split_kind, reduce_split, reduce_split_kind, row_split,
    row_split_kind, size_split, SIZE_SPLIT,
};
use crate::matrix::unlocked;
use crate::scalar::{Real, Scalar};
use crate::storage::{DenseArray, DenseMatrix};
use crate::vml::raw;

/// `base` with `T`'s tag appended.
pub fn fname<T: Scalar>(base: &str) -> String {
    format!("{base}{}", T::TAG)
}

pub fn unary_annotation<T: Scalar>() -> String {
    let a = array_split::<T>();
    format!("@splittable(size: {SIZE_SPLIT}(size), a: {a}(size), mut out: {a}(size))")
}

pub fn binary_annotation<T: Scalar>() -> String {
    let a = array_split::<T>();
    format!("@splittable(size: {SIZE_SPLIT}(size), a: {a}(size), b: {a}(size), mut out: {a}(size))")
}

pub fn linear_annotation<T: Scalar>() -> String {
    let a = array_split::<T>();
    format!("@splittable(size: {SIZE_SPLIT}(size), a: {a}(size), scale: _, shift: _, mut out: {a}(size))")
}

pub fn normalize_annotation<T: Scalar>() -> String {
    format!("@splittable(mut m: {}(m, axis), axis: _)", matrix_split::<T>())
}

pub const MATRIX_ADD_ANNOTATION: &str = "@splittable(left: S, right: S) -> S";
pub const SCALE_ANNOTATION: &str = "@splittable(mut m: S, val: _)";
/// Rows are filtered independently, so the matrix is split by rows only.
pub fn filter_annotation<T: Scalar>() -> String {
    format!("@splittable(m: {}(m)) -> unknown", row_split::<T>())
}

pub fn reduce_annotation<T: Scalar>() -> String {
    format!("@splittable(m: {}(m, axis), axis: _) -> {}(axis)", matrix_split::<T>(), reduce_split::<T>())
}

/// Registers `SizeSplit` (once) and `T`'s array, matrix, row and reduce
/// kinds. Kinds already present are left alone.
pub fn register_kinds<T: Scalar>(s: &mut Session) -> Result<(), Error> {
    for kind in [size_split(), array_split_kind::<T>(), matrix_split_kind::<T>(), row_split_kind::<T>(), reduce_split_kind::<T>()] {
        if !s.registry().contains(kind.name()) {
            s.register_kind(kind)?;
        }
    }
    Ok(())
}

fn size(v: &Value) -> Result<usize, String> {
    let n = *v.downcast_ref::<i64>().ok_or("size must be an i64")?;
    usize::try_from(n).map_err(|_| format!("negative size {n}"))
}

fn array<T: Scalar>(v: &Value, n: usize) -> Result<&DenseArray<T>, String> {
    let a = v.downcast_ref::<DenseArray<T>>().ok_or_else(|| format!("expected an array, got {}", v.data_type()))?;
    if a.len() < n {
        return Err(format!("size {n} exceeds an array of length {}", a.len()));
    }
    Ok(a)
}

fn matrix<T: Scalar>(v: &Value) -> Result<&DenseMatrix<T>, String> {
    v.downcast_ref::<DenseMatrix<T>>().ok_or_else(|| format!("expected a matrix, got {}", v.data_type()))
}

fn scalar<T: Scalar>(v: &Value) -> Result<T, String> {
    v.downcast_ref::<T>().copied().ok_or_else(|| format!("expected a scalar, got {}", v.data_type()))
}

fn axis(v: &Value) -> Result<usize, String> {
    match v.downcast_ref::<i64>() {
        Some(&a @ (0 | 1)) => Ok(a as usize),
        other => Err(format!("axis must be 0 or 1, got {other:?}")),
    }
}

fn unary_sig<T: Scalar>() -> Signature {
    Signature::new().arg::<i64>().arg::<DenseArray<T>>().arg_mut::<DenseArray<T>>()
}

fn binary_sig<T: Scalar>() -> Signature {
    Signature::new().arg::<i64>().arg::<DenseArray<T>>().arg::<DenseArray<T>>().arg_mut::<DenseArray<T>>()
}

fn register_binary<T: Scalar>(
    s: &mut Session,
    base: &str,
    k: unsafe fn(usize, *const T, *const T, *mut T),
) -> Result<(), Error> {
    let def = FunctionDef::new(fname::<T>(base), &binary_annotation::<T>(), binary_sig::<T>(), move |args| {
        let n = size(&args[0])?;
        let (a, b, out) = (array::<T>(&args[1], n)?, array::<T>(&args[2], n)?, array::<T>(&args[3], n)?);
        // SAFETY: lengths checked above; the executor owns the stores for
        // the stage and gives this call its own piece of `out`.
        unsafe { k(n, a.ptr(), b.ptr(), out.ptr()) };
        Ok(None)
    })?;
    s.register_function(def)?;
    Ok(())
}

fn register_unary<T: Scalar>(s: &mut Session, base: &str, k: unsafe fn(usize, *const T, *mut T)) -> Result<(), Error> {
    let def = FunctionDef::new(fname::<T>(base), &unary_annotation::<T>(), unary_sig::<T>(), move |args| {
        let n = size(&args[0])?;
        let (a, out) = (array::<T>(&args[1], n)?, array::<T>(&args[2], n)?);
        // SAFETY: as for the binary kernels.
        unsafe { k(n, a.ptr(), out.ptr()) };
        Ok(None)
    })?;
    s.register_function(def)?;
    Ok(())
}

/// `vd_add`, `vd_sub`, `vd_mul`, `vd_div` and `vd_linear` for `T`.
pub fn register_vector_kernels<T: Scalar>(s: &mut Session) -> Result<(), Error> {
    register_kinds::<T>(s)?;
    register_binary::<T>(s, "vd_add", raw::add::<T>)?;
    register_binary::<T>(s, "vd_sub", raw::sub::<T>)?;
    register_binary::<T>(s, "vd_mul", raw::mul::<T>)?;
    register_binary::<T>(s, "vd_div", raw::div::<T>)?;
    let sig = Signature::new().arg::<i64>().arg::<DenseArray<T>>().arg::<T>().arg::<T>().arg_mut::<DenseArray<T>>();
    let def = FunctionDef::new(fname::<T>("vd_linear"), &linear_annotation::<T>(), sig, |args| {
        let n = size(&args[0])?;
        let (a, out) = (array::<T>(&args[1], n)?, array::<T>(&args[4], n)?);
        let (scale, shift) = (scalar::<T>(&args[2])?, scalar::<T>(&args[3])?);
        // SAFETY: as for the binary kernels.
        unsafe { raw::linear(n, a.ptr(), scale, shift, out.ptr()) };
        Ok(None)
    })?;
    s.register_function(def)?;
    Ok(())
}

/// The transcendental kernels: `vd_sqrt`, `vd_log1p`, `vd_exp`, `vd_erf`,
/// `vd_sin`, `vd_cos`, `vd_asin`.
pub fn register_real_kernels<T: Real>(s: &mut Session) -> Result<(), Error> {
    register_kinds::<T>(s)?;
    register_unary::<T>(s, "vd_sqrt", raw::sqrt::<T>)?;
    register_unary::<T>(s, "vd_log1p", raw::log1p::<T>)?;
    register_unary::<T>(s, "vd_exp", raw::exp::<T>)?;
    register_unary::<T>(s, "vd_erf", raw::erf::<T>)?;
    register_unary::<T>(s, "vd_sin", raw::sin::<T>)?;
    register_unary::<T>(s, "vd_cos", raw::cos::<T>)?;
    register_unary::<T>(s, "vd_asin", raw::asin::<T>)?;
    Ok(())
}

/// `matrix_add`, `scale_matrix`, `filter_zeroed_rows` and
/// `sum_reduce_to_vector` for `T`.
pub fn register_matrix_ops<T: Scalar>(s: &mut Session) -> Result<(), Error> {
    register_kinds::<T>(s)?;
    let m = || Signature::new().arg::<DenseMatrix<T>>();
    let def = FunctionDef::new(
        fname::<T>("matrix_add"),
        MATRIX_ADD_ANNOTATION,
        m().arg::<DenseMatrix<T>>().returns::<DenseMatrix<T>>(),
        |args| {
            let (l, r) = (matrix::<T>(&args[0])?, matrix::<T>(&args[1])?);
            // SAFETY: read-only access to stores the executor holds.
            let sum = unsafe { unlocked::add(l, r) }.map_err(|e| e.to_string())?;
            Ok(Some(Value::new(sum)))
        },
    )?;
    s.register_function(def)?;
    let def = FunctionDef::new(
        fname::<T>("scale_matrix"),
        SCALE_ANNOTATION,
        Signature::new().arg_mut::<DenseMatrix<T>>().arg::<T>(),
        |args| {
            let (m, val) = (matrix::<T>(&args[0])?, scalar::<T>(&args[1])?);
            // SAFETY: this call's piece of `m` is not shared with other workers.
            unsafe { unlocked::scale(m, val) };
            Ok(None)
        },
    )?;
    s.register_function(def)?;
    let def = FunctionDef::new(fname::<T>("filter_zeroed_rows"), &filter_annotation::<T>(), m().returns::<DenseMatrix<T>>(), |args| {
        // SAFETY: read-only.
        Ok(Some(Value::new(unsafe { unlocked::filter_zeroed_rows(matrix::<T>(&args[0])?) })))
    })?;
    s.register_function(def)?;
    let def = FunctionDef::new(
        fname::<T>("sum_reduce_to_vector"),
        &reduce_annotation::<T>(),
        m().arg::<i64>().returns::<DenseArray<T>>(),
        |args| {
            let (m, axis) = (matrix::<T>(&args[0])?, axis(&args[1])?);
            // SAFETY: read-only.
            Ok(Some(Value::new(unsafe { unlocked::sum_reduce(m, axis) })))
        },
    )?;
    s.register_function(def)?;
    Ok(())
}

/// `normalize_matrix_axis` for `T`.
pub fn register_real_matrix_ops<T: Real>(s: &mut Session) -> Result<(), Error> {
    register_kinds::<T>(s)?;
    let def = FunctionDef::new(
        fname::<T>("normalize_matrix_axis"),
        &normalize_annotation::<T>(),
        Signature::new().arg_mut::<DenseMatrix<T>>().arg::<i64>(),
        |args| {
            let (m, axis) = (matrix::<T>(&args[0])?, axis(&args[1])?);
            // SAFETY: this call's piece of `m` is not shared with other workers.
            unsafe { unlocked::normalize_axis(m, axis) };
            Ok(None)
        },
    )?;
    s.register_function(def)?;
    Ok(())
}

/// Everything for `T = f64` plus the integer-safe subset for `i64`.
pub fn register_all(s: &mut Session) -> Result<(), Error> {
    register_vector_kernels::<f64>(s)?;
    register_real_kernels::<f64>(s)?;
    register_matrix_ops::<f64>(s)?;
    register_real_matrix_ops::<f64>(s)?;
    register_vector_kernels::<i64>(s)?;
    register_matrix_ops::<i64>(s)?;
    Ok(())
}
