//! Checks that the runtime agrees with plain sequential calls.
//!
//! Two tools: [`check_splittable`] verifies that one function, split into
//! pieces and merged, matches a single whole call; [`RandomProgram`] builds
//! short random programs over the demo libraries and runs them either
//! through a session or as direct calls in program order.

use std::ops::Range;

use rand::Rng;
use splitann::{Arg, LazyHandle, Param, Session, SplitType, Value, WorkerCtx};

use crate::kinds::{array_split, matrix_split, reduce_split, SIZE_SPLIT};
use crate::register::fname;
use crate::scalar::Scalar;
use crate::storage::{DenseArray, DenseMatrix};

/// Flattened contents of a value, for comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum Flat {
    Float { shape: (usize, usize), data: Vec<f64> },
    Int { shape: (usize, usize), data: Vec<i64> },
    Opaque,
}

macro_rules! for_each_data_type {
    ($v:expr, $arr:ident => $on_array:expr, $mat:ident => $on_matrix:expr, $fallback:expr) => {{
        let v: &Value = $v;
        if let Some($arr) = v.downcast_ref::<DenseArray<f64>>() {
            $on_array
        } else if let Some($arr) = v.downcast_ref::<DenseArray<f32>>() {
            $on_array
        } else if let Some($arr) = v.downcast_ref::<DenseArray<i64>>() {
            $on_array
        } else if let Some($arr) = v.downcast_ref::<DenseArray<i32>>() {
            $on_array
        } else if let Some($mat) = v.downcast_ref::<DenseMatrix<f64>>() {
            $on_matrix
        } else if let Some($mat) = v.downcast_ref::<DenseMatrix<f32>>() {
            $on_matrix
        } else if let Some($mat) = v.downcast_ref::<DenseMatrix<i64>>() {
            $on_matrix
        } else if let Some($mat) = v.downcast_ref::<DenseMatrix<i32>>() {
            $on_matrix
        } else {
            $fallback
        }
    }};
}

fn flat_of<T: Scalar>(shape: (usize, usize), data: Vec<T>) -> Flat {
    if T::TAG.starts_with("_i") {
        Flat::Int { shape, data: data.iter().map(|x| x.to_i64().unwrap_or(0)).collect() }
    } else {
        Flat::Float { shape, data: data.iter().map(|x| x.as_f64()).collect() }
    }
}

/// An independent copy of an array or matrix; other values are cloned.
pub fn deep_copy(v: &Value) -> Value {
    for_each_data_type!(v,
        a => Value::new(DenseArray::new(a.to_vec())),
        m => Value::new(DenseMatrix::new(m.rows(), m.cols(), m.to_vec())),
        v.clone())
}

pub fn flatten(v: &Value) -> Flat {
    for_each_data_type!(v,
        a => flat_of((a.len(), 1), a.to_vec()),
        m => flat_of((m.rows(), m.cols()), m.to_vec()),
        Flat::Opaque)
}

/// Integers must match exactly; floats within `tol` relative error, with
/// NaN equal to NaN.
pub fn compare(what: &str, a: &Flat, b: &Flat, tol: f64) -> Result<(), String> {
    match (a, b) {
        (Flat::Int { shape: sa, data: da }, Flat::Int { shape: sb, data: db }) => {
            if sa != sb {
                return Err(format!("{what}: shape {sa:?} vs {sb:?}"));
            }
            match da.iter().zip(db).position(|(x, y)| x != y) {
                Some(i) => Err(format!("{what}: element {i}: {} vs {}", da[i], db[i])),
                None => Ok(()),
            }
        }
        (Flat::Float { shape: sa, data: da }, Flat::Float { shape: sb, data: db }) => {
            if sa != sb {
                return Err(format!("{what}: shape {sa:?} vs {sb:?}"));
            }
            for (i, (x, y)) in da.iter().zip(db).enumerate() {
                let ok = x == y || (x.is_nan() && y.is_nan()) || (x - y).abs() <= tol * x.abs().max(y.abs());
                if !ok {
                    return Err(format!("{what}: element {i}: {x} vs {y}"));
                }
            }
            Ok(())
        }
        (Flat::Opaque, Flat::Opaque) => Ok(()),
        _ => Err(format!("{what}: different kinds of value")),
    }
}

/// One function applied to concrete arguments with the split types its
/// annotation gives them.
#[derive(Debug, Clone)]
pub struct Case {
    pub function: String,
    pub args: Vec<Value>,
    /// `None` broadcasts the argument whole.
    pub split: Vec<Option<SplitType>>,
    /// Merge type of the result; `None` uses the pieces' default.
    pub ret: Option<SplitType>,
    pub tol: f64,
}

fn ints(name: &str, params: &[usize]) -> SplitType {
    SplitType::new(name, params.iter().map(|&p| Param::Int(p as i64)).collect::<Vec<_>>())
}

/// Balanced contiguous ranges covering `0..total`.
fn pieces(total: usize, k: usize) -> Vec<Range<usize>> {
    (0..k).map(|i| total * i / k..total * (i + 1) / k).filter(|r| !r.is_empty()).collect()
}

/// Calls `case.function` once on copies of the whole arguments and once per
/// piece on `k` pieces, then compares mutated arguments and the merged
/// result.
pub fn check_splittable(s: &Session, case: &Case, k: usize) -> Result<(), String> {
    let f = s.function(&case.function).ok_or_else(|| format!("{} is not registered", case.function))?;
    let reg = s.registry();
    let what = format!("{} in {k} pieces", case.function);

    let whole_args: Vec<Value> = case.args.iter().map(deep_copy).collect();
    let whole = f.call(&whole_args)?;

    let split_args: Vec<Value> = case.args.iter().map(deep_copy).collect();
    let total = case
        .split
        .iter()
        .zip(&split_args)
        .find_map(|(st, v)| st.as_ref().map(|st| reg.runtime_info(v, st).map(|i| i.total_elements)))
        .ok_or_else(|| format!("{what}: nothing is split"))?
        .map_err(|e| e.to_string())?;
    let mut results = Vec::new();
    for r in pieces(total, k) {
        let mut args = Vec::with_capacity(split_args.len());
        for (v, st) in split_args.iter().zip(&case.split) {
            args.push(match st {
                Some(st) => match reg.split(v, r.clone(), st, &WorkerCtx::single()).map_err(|e| e.to_string())? {
                    Some(piece) => piece.value,
                    None => return Err(format!("{what}: no piece for {r:?}")),
                },
                None => v.clone(),
            });
        }
        if let Some(v) = f.call(&args)? {
            results.push(v);
        }
    }
    for (i, (a, b)) in whole_args.iter().zip(&split_args).enumerate() {
        compare(&format!("{what}, argument {i}"), &flatten(a), &flatten(b), case.tol)?;
    }
    if let Some(whole) = whole {
        if results.is_empty() {
            return Err(format!("{what}: pieces returned nothing"));
        }
        let merged = if results.len() == 1 {
            results.pop().expect("one result")
        } else {
            let st = match &case.ret {
                Some(st) => st.clone(),
                None => reg.default_split_type(&results[0]).map_err(|e| e.to_string())?,
            };
            reg.merge(results, &st).map_err(|e| e.to_string())?
        };
        compare(&format!("{what}, result"), &flatten(&whole), &flatten(&merged), case.tol)?;
    }
    Ok(())
}

/// Draws an element: floats from `lo..hi`, integers from a symmetric range.
fn draw<T: Scalar, R: Rng>(rng: &mut R, lo: f64, hi: f64) -> T {
    if T::TAG.starts_with("_i") {
        T::from(rng.gen_range(-1000i64..1000)).expect("fits")
    } else {
        T::from(rng.gen_range(lo..hi)).expect("fits")
    }
}

fn random_array<T: Scalar, R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DenseArray<T> {
    DenseArray::from_fn(n, |_| draw(rng, lo, hi))
}

/// A `rows x cols` matrix with roughly a quarter of its rows all zero.
fn random_matrix<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix<T> {
    let zero: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.25)).collect();
    DenseMatrix::from_fn(rows, cols, |r, _| if zero[r] { T::zero() } else { draw(rng, 0.5, 2.0) })
}

const BINARY: [&str; 4] = ["vd_add", "vd_sub", "vd_mul", "vd_div"];
const UNARY: [&str; 7] = ["vd_sqrt", "vd_log1p", "vd_exp", "vd_erf", "vd_sin", "vd_cos", "vd_asin"];

/// One of each annotated function over random `T` data, with the split
/// types their annotations assign. `real` adds the floating-only
/// functions.
pub fn splittability_cases<T: Scalar, R: Rng>(rng: &mut R, real: bool) -> Vec<Case> {
    let mut cases = Vec::new();
    let n = rng.gen_range(17..300usize);
    let len = n + rng.gen_range(0..3);
    let size = Value::new(n as i64);
    let sz = ints(SIZE_SPLIT, &[n]);
    let a = ints(&array_split::<T>(), &[n]);
    let arr = |rng: &mut R| Value::new(random_array::<T, R>(rng, len, 0.01, 1.0));
    for f in BINARY {
        cases.push(Case {
            function: fname::<T>(f),
            args: vec![size.clone(), arr(rng), arr(rng), arr(rng)],
            split: vec![Some(sz.clone()), Some(a.clone()), Some(a.clone()), Some(a.clone())],
            ret: None,
            tol: 1e-12,
        });
    }
    if real {
        for f in UNARY {
            cases.push(Case {
                function: fname::<T>(f),
                args: vec![size.clone(), arr(rng), arr(rng)],
                split: vec![Some(sz.clone()), Some(a.clone()), Some(a.clone())],
                ret: None,
                tol: 1e-12,
            });
        }
    }
    cases.push(Case {
        function: fname::<T>("vd_linear"),
        args: vec![size.clone(), arr(rng), Value::new(draw::<T, R>(rng, -3.0, 3.0)), Value::new(draw::<T, R>(rng, -3.0, 3.0)), arr(rng)],
        split: vec![Some(sz), Some(a.clone()), None, None, Some(a)],
        ret: None,
        tol: 1e-12,
    });

    let (rows, cols) = (rng.gen_range(1..40usize), rng.gen_range(1..40usize));
    let m = Value::new(random_matrix::<T, R>(rng, rows, cols));
    let other = Value::new(random_matrix::<T, R>(rng, rows, cols));
    let ms = |axis: usize| ints(&matrix_split::<T>(), &[rows, cols, axis]);
    for axis in [0, 1] {
        cases.push(Case {
            function: fname::<T>("matrix_add"),
            args: vec![m.clone(), other.clone()],
            split: vec![Some(ms(axis)), Some(ms(axis))],
            ret: Some(ms(axis)),
            tol: 1e-12,
        });
        cases.push(Case {
            function: fname::<T>("scale_matrix"),
            args: vec![m.clone(), Value::new(draw::<T, R>(rng, -2.0, 2.0))],
            split: vec![Some(ms(axis)), None],
            ret: None,
            tol: 1e-12,
        });
        cases.push(Case {
            function: fname::<T>("sum_reduce_to_vector"),
            args: vec![m.clone(), Value::new(axis as i64)],
            split: vec![Some(ms(axis)), None],
            ret: Some(ints(&reduce_split::<T>(), &[axis])),
            tol: 1e-9,
        });
        if real {
            cases.push(Case {
                function: fname::<T>("normalize_matrix_axis"),
                args: vec![m.clone(), Value::new(axis as i64)],
                split: vec![Some(ms(axis)), None],
                ret: None,
                tol: 1e-12,
            });
        }
    }
    cases.push(Case {
        function: fname::<T>("filter_zeroed_rows"),
        args: vec![m],
        split: vec![Some(ms(0))],
        ret: None,
        tol: 1e-12,
    });
    cases
}

/// Where a call argument comes from.
#[derive(Debug, Clone)]
pub enum Operand {
    /// Entry of the program's literal pool.
    Lit(usize),
    /// Result of an earlier step.
    Ret(usize),
    Const(Value),
}

#[derive(Debug, Clone)]
pub struct Step {
    pub function: String,
    pub args: Vec<Operand>,
}

/// Contents of every literal and every step result after a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub literals: Vec<Flat>,
    pub results: Vec<Option<Flat>>,
}

impl Snapshot {
    pub fn compare(&self, other: &Snapshot, tol: f64) -> Result<(), String> {
        for (i, (a, b)) in self.literals.iter().zip(&other.literals).enumerate() {
            compare(&format!("literal {i}"), a, b, tol)?;
        }
        for (i, (a, b)) in self.results.iter().zip(&other.results).enumerate() {
            match (a, b) {
                (Some(a), Some(b)) => compare(&format!("result of step {i}"), a, b, tol)?,
                (None, None) => {}
                _ => return Err(format!("step {i}: one run has a result and the other does not")),
            }
        }
        Ok(())
    }
}

/// A short straight-line program over arrays, matrices and earlier results.
#[derive(Debug, Clone)]
pub struct RandomProgram {
    pub literals: Vec<Value>,
    pub steps: Vec<Step>,
    /// Whether the data is floating point.
    pub real: bool,
}

impl RandomProgram {
    /// Up to `max_steps` calls over arrays of at most `max_len` elements and
    /// matrices of at most `max_dim` rows and columns.
    pub fn generate<T: Scalar, R: Rng>(rng: &mut R, real: bool, max_steps: usize, max_len: usize, max_dim: usize) -> Self {
        let len = rng.gen_range(1..=max_len.max(1));
        let size = if rng.gen_bool(0.05) { 0 } else { rng.gen_range(1..=len) };
        let (rows, cols) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
        let mut literals = Vec::new();
        let arrays: Vec<usize> = (0..4)
            .map(|_| {
                literals.push(Value::new(random_array::<T, R>(rng, len, 0.5, 2.0)));
                literals.len() - 1
            })
            .collect();
        let matrices: Vec<usize> = (0..2)
            .map(|_| {
                literals.push(Value::new(random_matrix::<T, R>(rng, rows, cols)));
                literals.len() - 1
            })
            .collect();
        literals.push(Value::new(DenseArray::<T>::zeros(max_dim)));
        let small = literals.len() - 1;

        let int = |x: usize| Operand::Const(Value::new(x as i64));
        let mut steps: Vec<Step> = Vec::new();
        // results with the literal matrices' shape, filtered matrices, and
        // reduced vectors with their lengths
        let (mut full, mut filtered, mut reduced) = (Vec::<usize>::new(), Vec::<usize>::new(), Vec::<(usize, usize)>::new());
        let pick = |rng: &mut R, xs: &[usize]| xs[rng.gen_range(0..xs.len())];
        let matrix = |rng: &mut R, full: &[usize]| {
            if !full.is_empty() && rng.gen_bool(0.4) {
                Operand::Ret(pick(rng, full))
            } else {
                Operand::Lit(pick(rng, &matrices))
            }
        };
        for i in 0..rng.gen_range(1..=max_steps) {
            let choice = rng.gen_range(0..10);
            let step = match choice {
                0..=3 => {
                    let out = Operand::Lit(pick(rng, &arrays));
                    let a = Operand::Lit(pick(rng, &arrays));
                    if real && rng.gen_bool(0.4) {
                        let f = UNARY[rng.gen_range(0..UNARY.len())];
                        Step { function: fname::<T>(f), args: vec![int(size), a, out] }
                    } else if rng.gen_bool(0.2) {
                        let scale = Operand::Const(Value::new(draw::<T, R>(rng, 0.5, 2.0)));
                        let shift = Operand::Const(Value::new(draw::<T, R>(rng, -1.0, 1.0)));
                        Step { function: fname::<T>("vd_linear"), args: vec![int(size), a, scale, shift, out] }
                    } else {
                        let b = Operand::Lit(pick(rng, &arrays));
                        let f = BINARY[rng.gen_range(0..BINARY.len())];
                        Step { function: fname::<T>(f), args: vec![int(size), a, b, out] }
                    }
                }
                4 => {
                    full.push(i);
                    Step { function: fname::<T>("matrix_add"), args: vec![matrix(rng, &full[..full.len() - 1]), matrix(rng, &full[..full.len() - 1])] }
                }
                5 => {
                    let val = Operand::Const(Value::new(draw::<T, R>(rng, 0.5, 2.0)));
                    Step { function: fname::<T>("scale_matrix"), args: vec![Operand::Lit(pick(rng, &matrices)), val] }
                }
                6 if real => Step {
                    function: fname::<T>("normalize_matrix_axis"),
                    args: vec![Operand::Lit(pick(rng, &matrices)), int(rng.gen_range(0..2))],
                },
                6 | 7 => {
                    if !filtered.is_empty() && rng.gen_bool(0.5) {
                        let f = Operand::Ret(pick(rng, &filtered));
                        Step { function: fname::<T>("matrix_add"), args: vec![f.clone(), f] }
                    } else {
                        filtered.push(i);
                        Step { function: fname::<T>("filter_zeroed_rows"), args: vec![matrix(rng, &full)] }
                    }
                }
                8 => {
                    let axis = rng.gen_range(0..2);
                    reduced.push((i, if axis == 0 { cols } else { rows }));
                    Step { function: fname::<T>("sum_reduce_to_vector"), args: vec![matrix(rng, &full), int(axis)] }
                }
                _ => {
                    if let Some(&(v, n)) = reduced.last() {
                        let f = BINARY[rng.gen_range(0..BINARY.len())];
                        let b = if rng.gen_bool(0.5) { Operand::Ret(v) } else { Operand::Lit(small) };
                        Step { function: fname::<T>(f), args: vec![int(n), Operand::Ret(v), b, Operand::Lit(small)] }
                    } else {
                        let axis = rng.gen_range(0..2);
                        reduced.push((i, if axis == 0 { cols } else { rows }));
                        Step { function: fname::<T>("sum_reduce_to_vector"), args: vec![matrix(rng, &full), int(axis)] }
                    }
                }
            };
            steps.push(step);
        }
        RandomProgram { literals, steps, real }
    }

    /// One line per step, naming literals by index and shape.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            let args: Vec<String> = step
                .args
                .iter()
                .map(|o| match o {
                    Operand::Lit(l) => match flatten(&self.literals[*l]) {
                        Flat::Float { shape, .. } | Flat::Int { shape, .. } => format!("lit{l}{shape:?}"),
                        Flat::Opaque => format!("lit{l}"),
                    },
                    Operand::Ret(r) => format!("step{r}"),
                    Operand::Const(v) => format!("{v:?}"),
                })
                .collect();
            out.push_str(&format!("{i}: {}({})\n", step.function, args.join(", ")));
        }
        out
    }

    fn fresh_literals(&self) -> Vec<Value> {
        self.literals.iter().map(deep_copy).collect()
    }

    fn snapshot(literals: &[Value], results: &[Option<Value>]) -> Snapshot {
        Snapshot {
            literals: literals.iter().map(flatten).collect(),
            results: results.iter().map(|r| r.as_ref().map(flatten)).collect(),
        }
    }

    /// Calls each function directly, in program order, on whole values.
    pub fn run_eager(&self, s: &Session) -> Result<Snapshot, String> {
        let literals = self.fresh_literals();
        let mut results: Vec<Option<Value>> = Vec::new();
        for (i, step) in self.steps.iter().enumerate() {
            let f = s.function(&step.function).ok_or_else(|| format!("{} is not registered", step.function))?;
            let args = step
                .args
                .iter()
                .map(|o| match o {
                    Operand::Lit(l) => Ok(literals[*l].clone()),
                    Operand::Ret(r) => results[*r].clone().ok_or_else(|| format!("step {i} reads missing result {r}")),
                    Operand::Const(v) => Ok(v.clone()),
                })
                .collect::<Result<Vec<_>, String>>()?;
            results.push(f.call(&args).map_err(|e| format!("step {i} ({}): {e}", step.function))?);
        }
        Ok(Self::snapshot(&literals, &results))
    }

    /// Captures every step in `s` and evaluates once.
    pub fn run_session(&self, s: &mut Session) -> Result<Snapshot, splitann::Error> {
        let literals = self.fresh_literals();
        let mut handles: Vec<Option<LazyHandle>> = Vec::new();
        for step in &self.steps {
            let args = step
                .args
                .iter()
                .map(|o| match o {
                    Operand::Lit(l) => Arg::Value(literals[*l].clone()),
                    Operand::Ret(r) => Arg::from(handles[*r].as_ref().expect("generated programs read only results")),
                    Operand::Const(v) => Arg::Value(v.clone()),
                })
                .collect();
            handles.push(s.call(&step.function, args)?);
        }
        s.evaluate()?;
        let results: Vec<Option<Value>> = handles.iter().map(|h| h.as_ref().and_then(|h| h.get().cloned())).collect();
        Ok(Self::snapshot(&literals, &results))
    }
}
