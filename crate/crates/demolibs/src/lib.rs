//! Two small annotated libraries for the split-annotation runtime: an
//! MKL-style set of elementwise vector kernels and a matrix library whose
//! operations split by rows or columns, reduce, and filter.
//!
//! Every operation has a safe eager form (in [`vml`] and [`matrix`]) and is
//! registered with a [`splitann::Session`] by the functions in [`register`].

pub mod conformance;
pub mod kinds;
pub mod matrix;
pub mod register;
pub mod scalar;
pub mod storage;
pub mod vml;

pub use matrix::MatrixError;
pub use register::{
    register_all, register_kinds, register_matrix_ops, register_real_kernels, register_real_matrix_ops,
    register_vector_kernels,
};
pub use scalar::{Real, Scalar};
pub use storage::{DenseArray, DenseMatrix};
pub use vml::VmlError;

pub type Array = DenseArray<f64>;
pub type Matrix = DenseMatrix<f64>;
pub type ArrayF32 = DenseArray<f32>;
pub type MatrixF32 = DenseMatrix<f32>;
pub type IntArray = DenseArray<i64>;
pub type IntMatrix = DenseMatrix<i64>;

/// A call argument holding a cheap clone (a new view) of `data`.
pub fn arg<D: splitann::Data + Clone>(data: &D) -> splitann::Arg {
    splitann::Arg::Value(splitann::Value::new(data.clone()))
}
