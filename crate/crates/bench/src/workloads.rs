//! Black Scholes, Haversine and the single-kernel intensity programs.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::program::{Kernel, Program};

pub const RISK_FREE_RATE: f64 = 0.05;
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Option prices for `n` random contracts.
pub fn black_scholes(n: usize, seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    let (price, strike) = (draw(50.0, 150.0), draw(50.0, 150.0));
    let (t, vol) = (draw(0.25, 2.0), draw(0.1, 0.5));
    black_scholes_from(price, strike, t, vol, RISK_FREE_RATE)
}

/// Call and put prices (outputs `call` and `put`) in 32 vector calls.
pub fn black_scholes_from(price: Vec<f64>, strike: Vec<f64>, t: Vec<f64>, vol: Vec<f64>, rate: f64) -> Program {
    use Kernel::*;
    let lin = |scale, shift| Linear { scale, shift };
    let mut p = Program::new("blackscholes", price.len());
    let s = p.input("price", price);
    let k = p.input("strike", strike);
    let t = p.input("t", t);
    let v = p.input("vol", vol);
    let [d1, d2, tmp, vs, nd1p, nd2p, ert, kert, nd1m, nd2m] =
        ["d1", "d2", "tmp", "vol_sqrt", "n_d1", "n_d2", "ert", "k_ert", "n_neg_d1", "n_neg_d2"].map(|n| p.temp(n));
    let call = p.output("call");
    let put = p.output("put");

    // d1 = (ln(S/K) + (r + v^2/2) t) / (v sqrt t)
    p.op(Div, &[s, k], d1);
    p.op(lin(1.0, -1.0), &[d1], d1);
    p.op(Log1p, &[d1], d1);
    p.op(Mul, &[v, v], tmp);
    p.op(lin(0.5, rate), &[tmp], tmp);
    p.op(Mul, &[tmp, t], tmp);
    p.op(Add, &[d1, tmp], d1);
    p.op(Sqrt, &[t], vs);
    p.op(Mul, &[v, vs], vs);
    p.op(Div, &[d1, vs], d1);
    p.op(Sub, &[d1, vs], d2);
    // N(x) = (1 + erf(x / sqrt 2)) / 2
    for (x, out) in [(d1, nd1p), (d2, nd2p)] {
        p.op(lin(FRAC_1_SQRT_2, 0.0), &[x], out);
        p.op(Erf, &[out], out);
        p.op(lin(0.5, 0.5), &[out], out);
    }
    p.op(lin(-rate, 0.0), &[t], ert);
    p.op(Exp, &[ert], ert);
    p.op(Mul, &[k, ert], kert);
    p.op(Mul, &[s, nd1p], call);
    p.op(Mul, &[kert, nd2p], tmp);
    p.op(Sub, &[call, tmp], call);
    for (x, out) in [(d1, nd1m), (d2, nd2m)] {
        p.op(lin(-FRAC_1_SQRT_2, 0.0), &[x], out);
        p.op(Erf, &[out], out);
        p.op(lin(0.5, 0.5), &[out], out);
    }
    p.op(Mul, &[kert, nd2m], put);
    p.op(Mul, &[s, nd1m], tmp);
    p.op(Sub, &[put, tmp], put);
    p
}

/// Distances from `n` random points to a fixed point.
pub fn haversine(n: usize, seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lat: Vec<f64> = (0..n).map(|_| rng.gen_range(-90.0..90.0)).collect();
    let lon: Vec<f64> = (0..n).map(|_| rng.gen_range(-180.0..180.0)).collect();
    haversine_from(lat, lon, 40.7128, -74.0060, EARTH_RADIUS_KM)
}

/// Great-circle distance (output `dist`) from each (lat, lon) in degrees to
/// (lat0, lon0), in 18 vector calls.
pub fn haversine_from(lat: Vec<f64>, lon: Vec<f64>, lat0: f64, lon0: f64, radius: f64) -> Program {
    use Kernel::*;
    let lin = |scale, shift| Linear { scale, shift };
    let rad = PI / 180.0;
    let (lat0, lon0) = (lat0 * rad, lon0 * rad);
    let mut p = Program::new("haversine", lat.len());
    let lat = p.input("lat", lat);
    let lon = p.input("lon", lon);
    let [lat_r, lon_r, dlat, dlon, a] = ["lat_rad", "lon_rad", "dlat", "dlon", "a"].map(|n| p.temp(n));
    let dist = p.output("dist");

    p.op(lin(rad, 0.0), &[lat], lat_r);
    p.op(lin(rad, 0.0), &[lon], lon_r);
    p.op(lin(1.0, -lat0), &[lat_r], dlat);
    p.op(lin(1.0, -lon0), &[lon_r], dlon);
    // sin^2(dlat / 2)
    p.op(lin(0.5, 0.0), &[dlat], dlat);
    p.op(Sin, &[dlat], dlat);
    p.op(Mul, &[dlat, dlat], dlat);
    // sin^2(dlon / 2)
    p.op(lin(0.5, 0.0), &[dlon], dlon);
    p.op(Sin, &[dlon], dlon);
    p.op(Mul, &[dlon, dlon], dlon);
    // a = sin^2(dlat/2) + cos(lat0) cos(lat) sin^2(dlon/2)
    p.op(Cos, &[lat_r], a);
    p.op(lin(lat0.cos(), 0.0), &[a], a);
    p.op(Mul, &[a, dlon], a);
    p.op(Add, &[dlat, a], a);
    // c = 2 asin(sqrt a)
    p.op(Sqrt, &[a], a);
    p.op(Asin, &[a], a);
    p.op(lin(2.0, 0.0), &[a], a);
    p.op(lin(radius, 0.0), &[a], dist);
    p
}

/// The intensity study's kernels, from least to most compute per byte.
pub const INTENSITY_KERNELS: [(&str, Kernel); 6] = [
    ("add", Kernel::Add),
    ("mul", Kernel::Mul),
    ("sqrt", Kernel::Sqrt),
    ("div", Kernel::Div),
    ("erf", Kernel::Erf),
    ("exp", Kernel::Exp),
];

/// `reps` calls of one kernel, each reading the inputs and writing `out`.
pub fn intensity(name: &str, kernel: Kernel, n: usize, reps: usize, seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Program::new(format!("intensity-{name}"), n);
    let a = p.input("a", (0..n).map(|_| rng.gen_range(0.5..1.5)).collect());
    let ins = if kernel.inputs() == 2 {
        vec![a, p.input("b", (0..n).map(|_| rng.gen_range(0.5..1.5)).collect())]
    } else {
        vec![a]
    };
    let out = p.output("out");
    for _ in 0..reps {
        p.op(kernel, &ins, out);
    }
    p
}

/// Elements per input array so that a program with `inputs` arrays reads at
/// least `factor` times `cache_bytes`.
pub fn elements_for(cache_bytes: usize, factor: usize, inputs: usize) -> usize {
    (factor * cache_bytes).div_ceil(inputs.max(1) * std::mem::size_of::<f64>())
}
