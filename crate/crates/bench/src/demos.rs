//! Small matrix pipelines whose plans show the stage rules at work.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitann::{Arg, LazyHandle, Session, Value};
use splitann_demolibs::{arg, matrix, vml, IntArray, IntMatrix, Matrix};

use crate::measure::{fnv1a, Workload};

const COLS: usize = 64;

fn f64_bytes(xs: &[f64]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect()
}

fn i64_bytes(xs: &[i64]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn rows_for(n: usize) -> usize {
    n.div_ceil(COLS).max(1)
}

/// Normalizes the rows of a matrix, then its columns: two stages, since the
/// second call splits along the other axis.
pub struct NormalizeDemo {
    original: Vec<f64>,
    m: Matrix,
}

impl NormalizeDemo {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rows_for(n);
        let original: Vec<f64> = (0..rows * COLS).map(|_| rng.gen_range(0.1..10.0)).collect();
        NormalizeDemo { m: Matrix::new(rows, COLS, original.clone()), original }
    }
}

impl Workload for NormalizeDemo {
    fn name(&self) -> String {
        "normalize-demo".into()
    }

    fn reset(&self) {
        self.m.assign(&self.original);
    }

    fn run_eager(&self, _threads: usize) {
        matrix::normalize_matrix_axis(&self.m, 0).expect("valid axis");
        matrix::normalize_matrix_axis(&self.m, 1).expect("valid axis");
    }

    fn capture(&self, s: &mut Session) -> Result<Vec<LazyHandle>, splitann::Error> {
        s.call("normalize_matrix_axis", vec![arg(&self.m), Arg::Value(Value::new(0i64))])?;
        s.call("normalize_matrix_axis", vec![arg(&self.m), Arg::Value(Value::new(1i64))])?;
        Ok(Vec::new())
    }

    fn checksum(&self) -> u64 {
        fnv1a(&f64_bytes(&self.m.to_vec()))
    }
}

/// Sums an integer matrix's columns, then doubles the sums with a vector
/// kernel: two stages, since a reduced value is merged before it is read.
pub struct ReduceDemo {
    m: IntMatrix,
    out: IntArray,
}

impl ReduceDemo {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = IntMatrix::from_fn(rows_for(n), COLS, |_, _| rng.gen_range(-1000..1000));
        ReduceDemo { m, out: IntArray::zeros(COLS) }
    }
}

impl Workload for ReduceDemo {
    fn name(&self) -> String {
        "reduce-demo".into()
    }

    fn run_eager(&self, _threads: usize) {
        let v = matrix::sum_reduce_to_vector(&self.m, 0).expect("valid axis");
        vml::add(COLS, &v, &v, &self.out).expect("lengths match");
    }

    fn capture(&self, s: &mut Session) -> Result<Vec<LazyHandle>, splitann::Error> {
        let v = s
            .call("sum_reduce_to_vector_i64", vec![arg(&self.m), Arg::Value(Value::new(0i64))])?
            .expect("sum_reduce_to_vector returns a value");
        let size = Arg::Value(Value::new(COLS as i64));
        s.call("vd_add_i64", vec![size, Arg::from(&v), Arg::from(&v), arg(&self.out)])?;
        Ok(Vec::new())
    }

    fn checksum(&self) -> u64 {
        fnv1a(&i64_bytes(&self.out.to_vec()))
    }
}

/// Drops the all-zero rows of a matrix and adds the result to itself: two
/// stages, since the filter's output has an unknown split type.
pub struct FilterDemo {
    m: Matrix,
    result: Mutex<Option<Matrix>>,
}

impl FilterDemo {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rows_for(n);
        let zero: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.3)).collect();
        let m = Matrix::from_fn(rows, COLS, |r, _| if zero[r] { 0.0 } else { rng.gen_range(-1.0..1.0) });
        FilterDemo { m, result: Mutex::new(None) }
    }
}

impl Workload for FilterDemo {
    fn name(&self) -> String {
        "filter-demo".into()
    }

    fn run_eager(&self, _threads: usize) {
        let f = matrix::filter_zeroed_rows(&self.m);
        let sum = matrix::matrix_add(&f, &f).expect("same shape");
        *self.result.lock().unwrap() = Some(sum);
    }

    fn capture(&self, s: &mut Session) -> Result<Vec<LazyHandle>, splitann::Error> {
        let f = s.call("filter_zeroed_rows", vec![arg(&self.m)])?.expect("filter returns a value");
        let sum = s.call("matrix_add", vec![Arg::from(&f), Arg::from(&f)])?.expect("add returns a value");
        Ok(vec![sum])
    }

    fn keep(&self, results: Vec<Value>) {
        let m = results[0].downcast_ref::<Matrix>().expect("matrix_add returns a matrix").clone();
        *self.result.lock().unwrap() = Some(m);
    }

    fn checksum(&self) -> u64 {
        let result = self.result.lock().unwrap();
        match result.as_ref() {
            Some(m) => {
                let mut bytes = f64_bytes(&m.to_vec());
                bytes.extend((m.rows() as u64).to_le_bytes());
                fnv1a(&bytes)
            }
            None => fnv1a(&[]),
        }
    }
}
