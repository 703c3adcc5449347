//! Workload outputs against independent references, eagerly and through a
//! session.

use std::f64::consts::{FRAC_PI_2, PI};

use splitann::{ExecConfig, Session};
use splitann_bench::measure::run_session;
use splitann_bench::workloads::{black_scholes_from, haversine_from};
use splitann_bench::{Program, Workload};

/// Discounted expected payoffs under the lognormal terminal price,
/// integrated with Simpson's rule over z in [-12, 12].
fn integrated_prices(s: f64, k: f64, r: f64, vol: f64, t: f64) -> (f64, f64) {
    let steps = 200_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / steps as f64;
    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    let terminal = |z: f64| s * ((r - 0.5 * vol * vol) * t + vol * t.sqrt() * z).exp();
    let (mut call, mut put) = (0.0, 0.0);
    for i in 0..=steps {
        let z = lo + i as f64 * h;
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let st = terminal(z);
        call += w * (st - k).max(0.0) * density(z);
        put += w * (k - st).max(0.0) * density(z);
    }
    let discount = (-r * t).exp() * h / 3.0;
    (call * discount, put * discount)
}

fn outputs(p: &Program, names: &[&str]) -> Vec<Vec<f64>> {
    names.iter().map(|n| p.array(n).expect("declared output").to_vec()).collect()
}

fn through_session(p: &Program, threads: usize, batch: Option<usize>) {
    let mut s = Session::with_config(ExecConfig { threads, batch_override: batch, ..ExecConfig::default() });
    splitann_demolibs::register_all(&mut s).unwrap();
    p.reset();
    run_session(p, &mut s).unwrap();
}

#[test]
fn integration_reproduces_the_reference_prices() {
    let (call, put) = integrated_prices(100.0, 100.0, 0.05, 0.2, 1.0);
    assert!((call - 10.4506).abs() < 1e-3, "call {call}");
    assert!((put - 5.5735).abs() < 1e-3, "put {put}");
}

#[test]
fn black_scholes_matches_integrated_prices() {
    let cases = [(100.0, 100.0, 1.0, 0.2), (80.0, 100.0, 0.5, 0.3), (120.0, 95.0, 2.0, 0.15), (60.0, 140.0, 0.25, 0.45)];
    let n = cases.len();
    let p = black_scholes_from(
        cases.iter().map(|c| c.0).collect(),
        cases.iter().map(|c| c.1).collect(),
        cases.iter().map(|c| c.2).collect(),
        cases.iter().map(|c| c.3).collect(),
        0.05,
    );
    p.run_eager(2);
    let eager = outputs(&p, &["call", "put"]);
    for (i, &(s, k, t, vol)) in cases.iter().enumerate() {
        let (call, put) = integrated_prices(s, k, 0.05, vol, t);
        assert!((eager[0][i] - call).abs() < 1e-3, "call {i}: {} vs {call}", eager[0][i]);
        assert!((eager[1][i] - put).abs() < 1e-3, "put {i}: {} vs {put}", eager[1][i]);
    }
    assert!((eager[0][0] - 10.4506).abs() < 1e-3);
    assert!((eager[1][0] - 5.5735).abs() < 1e-3);

    for (threads, batch) in [(1, None), (3, Some(1)), (2, Some(3))] {
        through_session(&p, threads, batch);
        assert_eq!(outputs(&p, &["call", "put"]), eager, "{threads} threads, batch {batch:?}");
    }
    assert_eq!(eager[0].len(), n);
}

#[test]
fn quarter_circle_on_the_unit_sphere() {
    let p = haversine_from(vec![0.0, 0.0, 90.0], vec![90.0, 0.0, 0.0], 0.0, 0.0, 1.0);
    p.run_eager(1);
    let d = p.array("dist").unwrap().to_vec();
    assert!((d[0] - FRAC_PI_2).abs() < 1e-12, "{}", d[0]);
    assert!(d[1].abs() < 1e-12);
    assert!((d[2] - FRAC_PI_2).abs() < 1e-12, "{}", d[2]);

    through_session(&p, 2, Some(1));
    assert_eq!(p.array("dist").unwrap().to_vec(), d);
}

#[test]
fn haversine_matches_the_spherical_law_of_cosines() {
    let lat: Vec<f64> = (0..50).map(|i| -80.0 + 3.2 * i as f64).collect();
    let lon: Vec<f64> = (0..50).map(|i| -170.0 + 6.9 * i as f64).collect();
    let (lat0, lon0) = (40.7128f64, -74.0060f64);
    let p = haversine_from(lat.clone(), lon.clone(), lat0, lon0, 6371.0);
    p.run_eager(1);
    let d = p.array("dist").unwrap().to_vec();
    let rad = PI / 180.0;
    for i in 0..lat.len() {
        let (p1, p2) = (lat[i] * rad, lat0 * rad);
        let cos_c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * ((lon[i] - lon0) * rad).cos();
        let expected = 6371.0 * cos_c.clamp(-1.0, 1.0).acos();
        assert!((d[i] - expected).abs() < 1e-6 * 6371.0, "{i}: {} vs {expected}", d[i]);
    }
}
