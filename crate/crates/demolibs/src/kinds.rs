//! Split kinds for the demo data types.

use splitann::{CtorArg, CtorError, DataType, Param, RuntimeInfo, SplitKind, SplitType, Value};

use crate::scalar::Scalar;
use crate::storage::{DenseArray, DenseMatrix};

pub const SIZE_SPLIT: &str = "SizeSplit";

pub fn array_split<T: Scalar>() -> String {
    format!("ArraySplit{}", T::TAG)
}

pub fn matrix_split<T: Scalar>() -> String {
    format!("MatrixSplit{}", T::TAG)
}

pub fn row_split<T: Scalar>() -> String {
    format!("RowSplit{}", T::TAG)
}

pub fn reduce_split<T: Scalar>() -> String {
    format!("ReduceSplit{}", T::TAG)
}

fn param(st: &SplitType, i: usize) -> Result<usize, String> {
    st.int_param(i)
        .and_then(|p| usize::try_from(p).ok())
        .ok_or_else(|| format!("{st}: parameter {i} is not a non-negative integer"))
}

fn array<T: Scalar>(v: &Value) -> Result<&DenseArray<T>, String> {
    v.downcast_ref::<DenseArray<T>>().ok_or_else(|| format!("expected an array, got {}", v.data_type()))
}

fn matrix<T: Scalar>(v: &Value) -> Result<&DenseMatrix<T>, String> {
    v.downcast_ref::<DenseMatrix<T>>().ok_or_else(|| format!("expected a matrix, got {}", v.data_type()))
}

/// `SizeSplit(size)`: an element count split alongside the arrays it
/// describes. Each piece is the piece's length.
pub fn size_split() -> SplitKind {
    SplitKind::builder(SIZE_SPLIT, DataType::of::<i64>())
        .splitter(|_, r, _, _| Ok(Some(Value::new(r.len() as i64))))
        .info(|v, st| {
            let n = *v.downcast_ref::<i64>().ok_or("size must be an i64")?;
            let declared = param(st, 0)?;
            if n < 0 || n as usize != declared {
                return Err(format!("size {n} does not match {st}"));
            }
            // occupies no cache, so it does not count toward the batch size
            Ok(RuntimeInfo { total_elements: declared, element_size_bytes: 0 })
        })
        .build()
}

/// `ArraySplit(size)`: the first `size` elements of an array, split into
/// contiguous views. Returned arrays are merged by concatenation.
pub fn array_split_kind<T: Scalar>() -> SplitKind {
    SplitKind::builder(array_split::<T>(), DataType::of::<DenseArray<T>>())
        .constructor(|args: &[CtorArg<'_>]| match args {
            [a] => match a.value().and_then(|v| v.downcast_ref::<DenseArray<T>>()) {
                Some(arr) => Ok(vec![Param::Int(arr.len() as i64)]),
                None => match a {
                    CtorArg::Pending(_) => Err(CtorError::NeedsData),
                    CtorArg::Data(_) => a
                        .as_i64()
                        .map(|n| vec![Param::Int(n)])
                        .ok_or_else(|| CtorError::Invalid("ArraySplit takes a length or an array".into())),
                },
            },
            _ => Err(CtorError::Invalid("ArraySplit takes one argument".into())),
        })
        .splitter(|v, r, _, _| Ok(Some(Value::new(array::<T>(v)?.view(r.start, r.len())))))
        .merger(|pieces, _| {
            let mut out = Vec::new();
            for p in &pieces {
                array::<T>(p)?.read(|s| out.extend_from_slice(s));
            }
            Ok(Value::new(DenseArray::new(out)))
        })
        .info(|v, st| {
            let a = array::<T>(v)?;
            let n = param(st, 0)?;
            if n > a.len() {
                return Err(format!("{st} exceeds an array of length {}", a.len()));
            }
            Ok(RuntimeInfo { total_elements: n, element_size_bytes: std::mem::size_of::<T>() })
        })
        .default_constructor(|v| Ok(vec![Param::Int(array::<T>(v)?.len() as i64)]))
        .build()
}

/// Shape of a matrix argument, or of a pending one whose producer splits it
/// as `kind`, which carries the shape.
fn shape<T: Scalar>(m: &CtorArg<'_>, kind: &str) -> Result<(i64, i64), CtorError> {
    match m {
        CtorArg::Data(v) => {
            let m = v
                .downcast_ref::<DenseMatrix<T>>()
                .ok_or_else(|| CtorError::Invalid(format!("expected a matrix, got {}", v.data_type())))?;
            Ok((m.rows() as i64, m.cols() as i64))
        }
        CtorArg::Pending(Some(st)) if st.name() == kind => match (st.int_param(0), st.int_param(1)) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(CtorError::NeedsData),
        },
        CtorArg::Pending(_) => Err(CtorError::NeedsData),
    }
}

/// `MatrixSplit(m, axis)` ⇒ `(rows, cols, axis)`: row blocks for axis 0,
/// column blocks for axis 1. Merging stacks the blocks back together; row
/// blocks may differ in height, which is what filtered matrices need.
pub fn matrix_split_kind<T: Scalar>() -> SplitKind {
    let name = matrix_split::<T>();
    let own = name.clone();
    SplitKind::builder(name, DataType::of::<DenseMatrix<T>>())
        .constructor(move |args: &[CtorArg<'_>]| {
            let [m, axis] = args else {
                return Err(CtorError::Invalid("MatrixSplit takes a matrix and an axis".into()));
            };
            let (rows, cols) = shape::<T>(m, &own)?;
            let axis = match axis {
                CtorArg::Pending(_) => return Err(CtorError::NeedsData),
                a => a.as_i64().ok_or_else(|| CtorError::Invalid("axis must be an integer".into()))?,
            };
            if !(0..=1).contains(&axis) {
                return Err(CtorError::Invalid(format!("axis must be 0 or 1, got {axis}")));
            }
            Ok(vec![Param::Int(rows), Param::Int(cols), Param::Int(axis)])
        })
        .splitter(|v, r, st, _| {
            let m = matrix::<T>(v)?;
            Ok(Some(Value::new(if param(st, 2)? == 0 { m.row_view(r.start, r.len()) } else { m.col_view(r.start, r.len()) })))
        })
        .merger(|pieces, st| {
            let ms = pieces.iter().map(matrix::<T>).collect::<Result<Vec<_>, _>>()?;
            if param(st, 2)? == 0 {
                let cols = ms[0].cols();
                if ms.iter().any(|m| m.cols() != cols) {
                    return Err("row blocks differ in width".into());
                }
                let rows = ms.iter().map(|m| m.rows()).sum();
                let data = ms.iter().flat_map(|m| m.to_vec()).collect();
                Ok(Value::new(DenseMatrix::new(rows, cols, data)))
            } else {
                let rows = ms[0].rows();
                if ms.iter().any(|m| m.rows() != rows) {
                    return Err("column blocks differ in height".into());
                }
                let cols = ms.iter().map(|m| m.cols()).sum();
                let blocks: Vec<Vec<Vec<T>>> = ms.iter().map(|m| m.to_rows()).collect();
                let data = (0..rows).flat_map(|r| blocks.iter().flat_map(move |b| b[r].clone())).collect();
                Ok(Value::new(DenseMatrix::new(rows, cols, data)))
            }
        })
        .info(|v, st| {
            let m = matrix::<T>(v)?;
            let (rows, cols, axis) = (param(st, 0)?, param(st, 1)?, param(st, 2)?);
            if (m.rows(), m.cols()) != (rows, cols) {
                return Err(format!("{st} does not describe a {}x{} matrix", m.rows(), m.cols()));
            }
            let (total, per) = if axis == 0 { (rows, cols) } else { (cols, rows) };
            Ok(RuntimeInfo { total_elements: total, element_size_bytes: per * std::mem::size_of::<T>() })
        })
        .default_constructor(|v| {
            let m = matrix::<T>(v)?;
            Ok(vec![Param::Int(m.rows() as i64), Param::Int(m.cols() as i64), Param::Int(0)])
        })
        .build()
}

/// `RowSplit(m)`: builds `MatrixSplit(m, 0)`. For functions such as row
/// filters that are only correct on row blocks.
pub fn row_split_kind<T: Scalar>() -> SplitKind {
    let target = matrix_split::<T>();
    let own = target.clone();
    SplitKind::builder(row_split::<T>(), DataType::of::<DenseMatrix<T>>())
        .constructor(move |args: &[CtorArg<'_>]| {
            let [m] = args else {
                return Err(CtorError::Invalid("RowSplit takes a matrix".into()));
            };
            let (rows, cols) = shape::<T>(m, &own)?;
            Ok(vec![Param::Int(rows), Param::Int(cols), Param::Int(0)])
        })
        .produces(target)
        .build()
}

/// `ReduceSplit(axis)`: partial sums from a reduction over a split matrix,
/// merged by adding them elementwise.
pub fn reduce_split_kind<T: Scalar>() -> SplitKind {
    SplitKind::builder(reduce_split::<T>(), DataType::of::<DenseArray<T>>())
        .merger(|pieces, _| {
            let mut acc = array::<T>(&pieces[0])?.to_vec();
            for p in &pieces[1..] {
                let v = array::<T>(p)?.to_vec();
                if v.len() != acc.len() {
                    return Err(format!("partial results of length {} and {}", acc.len(), v.len()));
                }
                for (a, x) in acc.iter_mut().zip(v) {
                    *a = a.k_add(x);
                }
            }
            Ok(Value::new(DenseArray::new(acc)))
        })
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use splitann::{SplitRegistry, WorkerCtx};

    fn registry() -> SplitRegistry {
        let mut r = SplitRegistry::new();
        r.register(size_split()).unwrap();
        r.register(array_split_kind::<f64>()).unwrap();
        r.register(matrix_split_kind::<f64>()).unwrap();
        r.register(reduce_split_kind::<f64>()).unwrap();
        r.register(array_split_kind::<i64>()).unwrap();
        r
    }

    #[test]
    fn matrix_constructor() {
        let r = registry();
        let m = Value::new(DenseMatrix::<f64>::zeros(4, 8));
        let axis = Value::new(1i64);
        let st = r.construct("MatrixSplit", &[CtorArg::Data(&m), CtorArg::Data(&axis)]).unwrap();
        assert_eq!(st.to_string(), "MatrixSplit<4,8,1>");
        let from_producer = r.try_construct("MatrixSplit", &[CtorArg::Pending(Some(&st)), CtorArg::Data(&Value::new(0i64))]);
        assert_eq!(from_producer.unwrap().unwrap().to_string(), "MatrixSplit<4,8,0>");
        let blind = r.try_construct("MatrixSplit", &[CtorArg::Pending(None), CtorArg::Data(&axis)]).unwrap();
        assert_eq!(blind, Err(CtorError::NeedsData));
        assert!(r.construct("MatrixSplit", &[CtorArg::Data(&m), CtorArg::Data(&Value::new(3i64))]).is_err());
        assert_eq!(r.default_split_type(&m).unwrap().to_string(), "MatrixSplit<4,8,0>");
    }

    #[test]
    fn column_split_round_trip() {
        let r = registry();
        let m = DenseMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64);
        let v = Value::new(m.clone());
        let st = r.construct("MatrixSplit", &[CtorArg::Data(&v), CtorArg::Data(&Value::new(1i64))]).unwrap();
        let info = r.runtime_info(&v, &st).unwrap();
        assert_eq!(info, RuntimeInfo { total_elements: 5, element_size_bytes: 24 });
        let ctx = WorkerCtx::single();
        let pieces: Vec<Value> = [0..2, 2..4, 4..9]
            .into_iter()
            .map(|rg| r.split(&v, rg, &st, &ctx).unwrap().unwrap().value)
            .collect();
        assert_eq!(pieces[2].downcast_ref::<DenseMatrix<f64>>().unwrap().cols(), 1);
        let merged = r.merge(pieces, &st).unwrap();
        assert_eq!(merged.downcast_ref::<DenseMatrix<f64>>().unwrap(), &m);
    }

    #[test]
    fn array_kinds() {
        let r = registry();
        let a = Value::new(DenseArray::new(vec![1i64, 2, 3, 4]));
        let st = r.construct("ArraySplit_i64", &[CtorArg::Data(&Value::new(3i64))]).unwrap();
        assert_eq!(r.runtime_info(&a, &st).unwrap().total_elements, 3);
        let too_long = r.construct("ArraySplit_i64", &[CtorArg::Data(&Value::new(9i64))]).unwrap();
        assert!(r.runtime_info(&a, &too_long).is_err());
        let size = r.construct("SizeSplit", &[CtorArg::Data(&Value::new(3i64))]).unwrap();
        assert_eq!(r.runtime_info(&Value::new(3i64), &size).unwrap().element_size_bytes, 0);
        let piece = r.split(&Value::new(3i64), 1..3, &size, &WorkerCtx::single()).unwrap().unwrap();
        assert_eq!(*piece.value.downcast_ref::<i64>().unwrap(), 2);
    }

    #[test]
    fn reduce_merge_adds() {
        let r = registry();
        let st = r.construct("ReduceSplit", &[CtorArg::Data(&Value::new(0i64))]).unwrap();
        let parts = vec![Value::new(DenseArray::new(vec![1.0, 2.0])), Value::new(DenseArray::new(vec![10.0, 20.0]))];
        let merged = r.merge(parts, &st).unwrap();
        assert_eq!(merged.downcast_ref::<DenseArray<f64>>().unwrap().to_vec(), vec![11.0, 22.0]);
    }
}
