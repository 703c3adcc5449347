//! The demo libraries driven through a session: stage structure and
//! equality with eager execution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitann::{parse_annotation, Arg, ExecConfig, Session, Value};
use splitann_demolibs::register::{
    binary_annotation, normalize_annotation, reduce_annotation, unary_annotation, filter_annotation,
    MATRIX_ADD_ANNOTATION, SCALE_ANNOTATION,
};
use splitann_demolibs::{arg, matrix, register_all, vml, Array, DenseArray, IntArray, Matrix};

fn session(threads: usize, batch: Option<usize>) -> Session {
    let mut s = Session::with_config(ExecConfig { threads, batch_override: batch, ..ExecConfig::default() });
    register_all(&mut s).unwrap();
    s
}

fn n(x: usize) -> Arg {
    Arg::Value(Value::new(x as i64))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let zero: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.25)).collect();
    Matrix::from_fn(rows, cols, |r, _| if zero[r] { 0.0 } else { rng.gen_range(0.1..2.0) })
}

fn copy(m: &Matrix) -> Matrix {
    Matrix::new(m.rows(), m.cols(), m.to_vec())
}

fn matrix_of(v: &Value) -> &Matrix {
    v.downcast_ref::<Matrix>().expect("a matrix")
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y || (x - y).abs() <= tol * x.abs().max(y.abs()))
}

#[test]
fn black_scholes_snippet_is_one_stage_and_matches_eager() {
    let len = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d1: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..4.0)).collect();
    let tmp: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vol: Vec<f64> = (0..len).map(|_| rng.gen_range(0.5..2.0)).collect();

    let eager = Array::new(d1.clone());
    let (t, v) = (Array::new(tmp.clone()), Array::new(vol.clone()));
    vml::log1p(len, &eager, &eager).unwrap();
    vml::add(len, &eager, &t, &eager).unwrap();
    vml::div(len, &eager, &v, &eager).unwrap();

    let mut s = session(4, None);
    let d = Array::new(d1);
    s.call("vd_log1p", vec![n(len), arg(&d), arg(&d)]).unwrap();
    s.call("vd_add", vec![n(len), arg(&d), arg(&t), arg(&d)]).unwrap();
    s.call("vd_div", vec![n(len), arg(&d), arg(&v), arg(&d)]).unwrap();
    let plan = s.explain().unwrap();
    assert_eq!(plan.lines().count(), 1, "{plan}");
    s.evaluate().unwrap();
    assert_eq!(d.to_vec(), eager.to_vec());
    let report = s.last_report().unwrap();
    assert_eq!(report.stages[0].workers, 4);
    assert_eq!(report.stages[0].calls, 3);
}

#[test]
fn normalizing_rows_then_columns_takes_two_stages() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = random_matrix(&mut rng, 37, 23);
    let eager = copy(&m);
    matrix::normalize_matrix_axis(&eager, 0).unwrap();
    matrix::normalize_matrix_axis(&eager, 1).unwrap();

    for (threads, batch) in [(1, None), (2, Some(3)), (4, Some(1)), (3, None)] {
        let mut s = session(threads, batch);
        let m = copy(&m);
        s.call("normalize_matrix_axis", vec![arg(&m), n(0)]).unwrap();
        s.call("normalize_matrix_axis", vec![arg(&m), n(1)]).unwrap();
        let plan = s.explain().unwrap();
        assert_eq!(plan.lines().count(), 2, "{plan}");
        assert!(plan.contains("MatrixSplit<37,23,0>") && plan.contains("MatrixSplit<37,23,1>"), "{plan}");
        s.evaluate().unwrap();
        assert!(rel_close(&m.to_vec(), &eager.to_vec(), 1e-12));
    }
}

#[test]
fn normalizing_the_same_axis_twice_pipelines() {
    let mut s = session(2, Some(4));
    let m = Matrix::from_fn(16, 4, |r, c| (r * 4 + c + 1) as f64);
    s.call("normalize_matrix_axis", vec![arg(&m), n(0)]).unwrap();
    s.call("scale_matrix", vec![arg(&m), Arg::Value(Value::new(3.0f64))]).unwrap();
    s.call("normalize_matrix_axis", vec![arg(&m), n(0)]).unwrap();
    assert_eq!(s.explain().unwrap().lines().count(), 1);
    s.evaluate().unwrap();
    for row in m.to_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn filter_output_ends_the_stage_and_matches_eager() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for round in 0..20 {
        let rows = rng.gen_range(1..64);
        let cols = rng.gen_range(1..64);
        let m = random_matrix(&mut rng, rows, cols);
        let f = matrix::filter_zeroed_rows(&m);
        let eager = matrix::matrix_add(&f, &f).unwrap();
        let threads = 1 + round % 4;
        let batch = [None, Some(1), Some(7), Some(4096)][round % 4];
        let mut s = session(threads, batch);
        let h = s.call("filter_zeroed_rows", vec![arg(&m)]).unwrap().unwrap();
        let sum = s.call("matrix_add", vec![Arg::from(&h), Arg::from(&h)]).unwrap().unwrap();
        let plan = s.explain().unwrap();
        assert_eq!(plan.lines().count(), 2, "{plan}");
        let out = s.force(&sum).unwrap();
        let out = matrix_of(&out);
        assert_eq!((out.rows(), out.cols()), (eager.rows(), eager.cols()));
        assert_eq!(out.to_vec(), eager.to_vec());
        assert_eq!(matrix_of(h.get().unwrap()).to_vec(), f.to_vec());
    }
}

#[test]
fn filter_on_the_spec_example() {
    let mut s = session(2, Some(1));
    let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]]);
    let h = s.call("filter_zeroed_rows", vec![arg(&m)]).unwrap().unwrap();
    let out = s.force(&h).unwrap();
    assert_eq!(matrix_of(&out).to_rows(), vec![vec![1.0, 2.0]]);
}

#[test]
fn sum_reduce_merges_partial_vectors() {
    let m = Matrix::from_fn(4, 8, |r, c| (r * 8 + c) as f64 * 0.37 + 1.0 / (1 + c) as f64);
    for axis in [0usize, 1] {
        let expect = matrix::sum_reduce_to_vector(&m, axis as i64).unwrap().to_vec();
        // an independent sequential sum
        let oracle: Vec<f64> = if axis == 0 {
            (0..8).map(|c| (0..4).map(|r| m.get(r, c)).sum()).collect()
        } else {
            (0..4).map(|r| (0..8).map(|c| m.get(r, c)).sum()).collect()
        };
        assert!(rel_close(&expect, &oracle, 1e-12));
        for batch in [None, Some(1), Some(3)] {
            let mut s = session(2, batch);
            let h = s.call("sum_reduce_to_vector", vec![arg(&m), n(axis)]).unwrap().unwrap();
            let v = s.force(&h).unwrap();
            let v = v.downcast_ref::<Array>().unwrap().to_vec();
            assert!(rel_close(&v, &oracle, 1e-9), "axis {axis}: {v:?} vs {oracle:?}");
        }
    }
}

#[test]
fn reduce_then_vector_kernel_takes_two_stages() {
    let m = Matrix::from_fn(10, 6, |r, c| (r + 2 * c) as f64);
    let mut s = session(3, Some(2));
    let v = s.call("sum_reduce_to_vector", vec![arg(&m), n(0)]).unwrap().unwrap();
    let out = Array::zeros(6);
    s.call("vd_add", vec![n(6), Arg::from(&v), Arg::from(&v), arg(&out)]).unwrap();
    let plan = s.explain().unwrap();
    assert_eq!(plan.lines().count(), 2, "{plan}");
    s.touch(&Value::new(out.clone())).unwrap();
    let sums: Vec<f64> = (0..6).map(|c| 2.0 * (0..10).map(|r| (r + 2 * c) as f64).sum::<f64>()).collect();
    assert_eq!(out.to_vec(), sums);
}

#[test]
fn integer_paths_are_exact() {
    let len = 10_007;
    let a = IntArray::from_fn(len, |i| i as i64 * 7 - 300);
    let b = IntArray::from_fn(len, |i| (i as i64 % 13) - 6);
    let out = IntArray::zeros(len);
    let mut s = session(4, Some(100));
    s.call("vd_mul_i64", vec![n(len), arg(&a), arg(&b), arg(&out)]).unwrap();
    s.call("vd_div_i64", vec![n(len), arg(&out), arg(&b), arg(&out)]).unwrap();
    s.call("vd_linear_i64", vec![n(len), arg(&out), Arg::Value(Value::new(3i64)), Arg::Value(Value::new(1i64)), arg(&out)])
        .unwrap();
    assert_eq!(s.explain().unwrap().lines().count(), 1);
    s.evaluate().unwrap();
    let expect: Vec<i64> = (0..len)
        .map(|i| {
            let (x, y) = (i as i64 * 7 - 300, (i as i64 % 13) - 6);
            let q = if y == 0 { 0 } else { (x * y) / y };
            3 * q + 1
        })
        .collect();
    assert_eq!(out.to_vec(), expect);
}

#[test]
fn f32_kernels_run_through_the_session() {
    let mut s = Session::new();
    splitann_demolibs::register_kinds::<f32>(&mut s).unwrap();
    splitann_demolibs::register_vector_kernels::<f32>(&mut s).unwrap();
    splitann_demolibs::register_real_kernels::<f32>(&mut s).unwrap();
    s.config_mut().threads = 2;
    let a = DenseArray::<f32>::from_fn(33, |i| i as f32);
    let out = DenseArray::<f32>::zeros(33);
    s.call("vd_sqrt_f32", vec![n(33), arg(&a), arg(&out)]).unwrap();
    s.evaluate().unwrap();
    assert_eq!(out.to_vec(), (0..33).map(|i| (i as f32).sqrt()).collect::<Vec<_>>());
}

#[test]
fn mismatched_dimensions_fail_in_the_kernel() {
    let mut s = session(1, None);
    let a = Matrix::zeros(3, 3);
    let b = Matrix::zeros(3, 4);
    let h = s.call("matrix_add", vec![arg(&a), arg(&b)]).unwrap().unwrap();
    assert!(s.force(&h).is_err());
    assert!(matches!(matrix::matrix_add(&a, &b), Err(splitann_demolibs::MatrixError::DimensionMismatch { .. })));
}

#[test]
fn nothing_pending_evaluates_to_nothing() {
    let mut s = session(2, None);
    assert_eq!(s.explain().unwrap(), "");
    s.evaluate().unwrap();
    assert_eq!(s.pending_calls(), 0);
}

#[test]
fn registered_annotations_are_the_documented_ones() {
    let s = session(1, None);
    let listing2_log1p = "@splittable(\n  size: SizeSplit(size), a: ArraySplit(size),\n  mut out: ArraySplit(size))";
    let listing2_add =
        "@splittable(\n  size: SizeSplit(size), a: ArraySplit(size),\n  b: ArraySplit(size), mut out: ArraySplit(size))";
    let parsed = |t: &str| parse_annotation(t).unwrap();
    let registered = |f: &str| s.function(f).unwrap().annotation().clone();

    assert_eq!(registered("vd_log1p"), parsed(listing2_log1p));
    assert_eq!(registered("vd_add"), parsed(listing2_add));
    assert_eq!(registered("vd_div"), parsed(listing2_add));
    assert_eq!(parsed(&unary_annotation::<f64>()), parsed(listing2_log1p));
    assert_eq!(parsed(&binary_annotation::<f64>()), parsed(listing2_add));

    let ex1 = "@splittable(mut m: MatrixSplit(m, axis), axis: _)";
    let ex5 = "@splittable(m: MatrixSplit(m, axis), axis: _) \n  -> ReduceSplit(axis)";
    assert_eq!(registered("normalize_matrix_axis"), parsed(ex1));
    assert_eq!(registered("matrix_add"), parsed("@splittable(left: S, right: S) -> S"));
    assert_eq!(registered("scale_matrix"), parsed("@splittable(mut m: S, val: _)"));
    assert_eq!(registered("filter_zeroed_rows"), parsed("@splittable(m: RowSplit(m)) -> unknown"));
    assert_eq!(registered("sum_reduce_to_vector"), parsed(ex5));
    assert_eq!(parsed(&normalize_annotation::<f64>()), parsed(ex1));
    assert_eq!(parsed(&reduce_annotation::<f64>()), parsed(ex5));
    assert_eq!(MATRIX_ADD_ANNOTATION, "@splittable(left: S, right: S) -> S");
    assert_eq!(SCALE_ANNOTATION, "@splittable(mut m: S, val: _)");
    assert_eq!(filter_annotation::<f64>(), "@splittable(m: RowSplit(m)) -> unknown");
}

#[test]
fn stage_structure_is_deterministic() {
    let build = || {
        let mut s = session(2, None);
        let m = Matrix::from_fn(8, 8, |r, c| (r + c) as f64);
        let f = s.call("filter_zeroed_rows", vec![arg(&m)]).unwrap().unwrap();
        s.call("matrix_add", vec![Arg::from(&f), Arg::from(&f)]).unwrap();
        s.call("normalize_matrix_axis", vec![arg(&m), n(0)]).unwrap();
        s.call("normalize_matrix_axis", vec![arg(&m), n(1)]).unwrap();
        s.explain().unwrap()
    };
    let first = build();
    for _ in 0..5 {
        assert_eq!(build(), first);
    }
}

#[test]
fn filter_after_a_column_split_still_filters_whole_rows() {
    // row 1 is zero only in its first half; a filter over column blocks
    // would drop it from some blocks and keep it in others
    let data = |r: usize, c: usize| match r {
        0 | 3 => 0.0,
        1 if c < 4 => 0.0,
        _ => 1.0 + (r * 8 + c) as f64,
    };
    let eager_m = Matrix::from_fn(6, 8, data);
    matrix::normalize_matrix_axis(&eager_m, 1).unwrap();
    let expected = matrix::filter_zeroed_rows(&eager_m);

    for (threads, batch) in [(1, Some(1)), (3, Some(2)), (2, None)] {
        let mut s = session(threads, batch);
        let m = Matrix::from_fn(6, 8, data);
        s.call("normalize_matrix_axis", vec![arg(&m), n(1)]).unwrap();
        let f = s.call("filter_zeroed_rows", vec![arg(&m)]).unwrap().unwrap();
        assert_eq!(s.plan().unwrap().stages.len(), 2, "{}", s.explain().unwrap());
        let got = s.force(&f).unwrap();
        let got = got.downcast_ref::<Matrix>().unwrap();
        assert_eq!((got.rows(), got.cols()), (expected.rows(), expected.cols()));
        assert_eq!(got.to_vec(), expected.to_vec());
    }

    // after a row split the filter joins the same stage
    let mut s = session(2, Some(2));
    let m = Matrix::from_fn(6, 8, data);
    s.call("normalize_matrix_axis", vec![arg(&m), n(0)]).unwrap();
    s.call("filter_zeroed_rows", vec![arg(&m)]).unwrap();
    assert_eq!(s.plan().unwrap().stages.len(), 1, "{}", s.explain().unwrap());
}
