//! For every annotated demo function: splitting the arguments as the
//! annotation says, calling the function on each piece and merging the
//! pieces gives the same result as one call on the whole input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splitann::{Param, Session, SplitType, Value};
use splitann_demolibs::conformance::{check_splittable, splittability_cases, Case};
use splitann_demolibs::{register_all, DenseArray};

const PIECES: [usize; 4] = [1, 2, 3, 17];
const INPUTS: usize = 50;

fn session() -> Session {
    let mut s = Session::new();
    register_all(&mut s).unwrap();
    s
}

fn run_all(cases: impl Fn(&mut ChaCha8Rng) -> Vec<Case>, seed: u64) {
    let s = session();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..INPUTS {
        for case in cases(&mut rng) {
            for k in PIECES {
                check_splittable(&s, &case, k).unwrap();
            }
        }
    }
}

#[test]
fn f64_functions_are_splittable() {
    run_all(|rng| splittability_cases::<f64, _>(rng, true), 7);
}

#[test]
fn i64_functions_are_splittable() {
    run_all(|rng| splittability_cases::<i64, _>(rng, false), 11);
}

#[test]
fn erf_over_two_pieces_matches_whole() {
    let s = session();
    let n = 1001;
    let xs = DenseArray::from_fn(n, |i| i as f64 / 250.0 - 2.0);
    let st = |name: &str| SplitType::new(name, vec![Param::Int(n as i64)]);
    let case = Case {
        function: "vd_erf".into(),
        args: vec![Value::new(n as i64), Value::new(xs), Value::new(DenseArray::<f64>::zeros(n))],
        split: vec![Some(st("SizeSplit")), Some(st("ArraySplit")), Some(st("ArraySplit"))],
        ret: None,
        tol: 0.0,
    };
    check_splittable(&s, &case, 2).unwrap();
}

#[test]
fn a_wrong_merge_is_reported() {
    // merging column sums as if they were rows gives the wrong shape
    let s = session();
    let m = splitann_demolibs::Matrix::from_fn(6, 5, |r, c| (r * 5 + c) as f64);
    let case = Case {
        function: "sum_reduce_to_vector".into(),
        args: vec![Value::new(m), Value::new(0i64)],
        split: vec![Some(SplitType::new("MatrixSplit", vec![Param::Int(6), Param::Int(5), Param::Int(0)])), None],
        ret: Some(SplitType::new("ArraySplit", vec![Param::Int(5)])),
        tol: 1e-12,
    };
    assert!(check_splittable(&s, &case, 3).is_err());
}
