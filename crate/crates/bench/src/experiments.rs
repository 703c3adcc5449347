//! The experiments: pipelining ablation, batch-size sweep and the
//! compute-intensity study.

use std::ops::RangeInclusive;

use crate::measure::{measure, BenchError, Measurement, Mode, Settings, Workload};
use crate::program::Kernel;
use crate::workloads::intensity;

fn check(baseline: u64, m: &Measurement) -> Result<(), BenchError> {
    if m.checksum != baseline {
        return Err(BenchError::ChecksumMismatch {
            workload: m.workload.clone(),
            mode: m.mode.to_string(),
            expected: baseline,
            got: m.checksum,
        });
    }
    Ok(())
}

/// Measures `w` in each mode; every mode must reproduce the first mode's
/// checksum.
pub fn ablation(w: &dyn Workload, modes: &[Mode], settings: &Settings) -> Result<Vec<Measurement>, BenchError> {
    let mut out: Vec<Measurement> = Vec::new();
    for &mode in modes {
        let m = measure(w, mode, settings)?;
        if let Some(first) = out.first() {
            check(first.checksum, &m)?;
        }
        out.push(m);
    }
    Ok(out)
}

pub struct Sweep {
    /// One pipelined measurement per fixed batch size.
    pub points: Vec<Measurement>,
    /// The heuristic's choice.
    pub auto: Measurement,
}

impl Sweep {
    pub fn best(&self) -> &Measurement {
        self.points.iter().min_by(|a, b| a.wall_ms.total_cmp(&b.wall_ms)).expect("a sweep has points")
    }

    /// Auto-selected wall time over the best fixed batch's.
    pub fn auto_ratio(&self) -> f64 {
        self.auto.wall_ms / self.best().wall_ms
    }
}

/// Pipelined runs at batch sizes `2^k` for `k` in `exponents`, plus one run
/// with the cache heuristic.
pub fn batch_sweep(w: &dyn Workload, settings: &Settings, exponents: RangeInclusive<u32>) -> Result<Sweep, BenchError> {
    let auto = measure(w, Mode::SaPipe, &Settings { batch: None, ..settings.clone() })?;
    let mut points = Vec::new();
    for k in exponents {
        let m = measure(w, Mode::SaPipe, &Settings { batch: Some(1 << k), ..settings.clone() })?;
        check(auto.checksum, &m)?;
        points.push(m);
    }
    Ok(Sweep { points, auto })
}

/// Powers of two up to 16, capped at `max`.
pub fn thread_counts(max: usize) -> Vec<usize> {
    [1, 2, 4, 8, 16].into_iter().filter(|&t| t <= max.max(1)).collect()
}

pub struct IntensityPoint {
    pub op: &'static str,
    pub threads: usize,
    pub eager: Measurement,
    pub pipe: Measurement,
}

impl IntensityPoint {
    /// Speedup of pipelined execution over the un-annotated library.
    pub fn speedup(&self) -> f64 {
        self.eager.wall_ms / self.pipe.wall_ms
    }
}

/// Each of `kernels` called `reps` times over `n` elements, eagerly and
/// pipelined, at each thread count.
pub fn intensity_study(
    kernels: &[(&'static str, Kernel)],
    n: usize,
    reps: usize,
    threads: &[usize],
    settings: &Settings,
    seed: u64,
) -> Result<Vec<IntensityPoint>, BenchError> {
    let mut out = Vec::new();
    for &(op, kernel) in kernels {
        let p = intensity(op, kernel, n, reps, seed);
        for &t in threads {
            let s = Settings { threads: t, ..settings.clone() };
            let eager = measure(&p, Mode::BaselineEager, &s)?;
            let pipe = measure(&p, Mode::SaPipe, &s)?;
            check(eager.checksum, &pipe)?;
            out.push(IntensityPoint { op, threads: t, eager, pipe });
        }
    }
    Ok(out)
}

/// Whether `speedups`, listed in the expected non-increasing order, hold
/// that order allowing at most one adjacent inversion of at most `slack`
/// (relative).
pub fn ordered_within(speedups: &[f64], slack: f64) -> bool {
    let mut inversions = 0;
    for w in speedups.windows(2) {
        if w[0] < w[1] {
            if w[1] > w[0] * (1.0 + slack) {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_with_slack() {
        assert!(ordered_within(&[3.0, 2.0, 1.0], 0.05));
        assert!(ordered_within(&[3.0, 3.1, 1.0], 0.05));
        assert!(!ordered_within(&[3.0, 3.2, 1.0], 0.05));
        assert!(!ordered_within(&[1.0, 1.04, 1.08], 0.05));
        assert!(ordered_within(&[2.0, 2.0, 2.0], 0.0));
    }

    #[test]
    fn capped_thread_counts() {
        assert_eq!(thread_counts(1), vec![1]);
        assert_eq!(thread_counts(6), vec![1, 2, 4]);
        assert_eq!(thread_counts(64), vec![1, 2, 4, 8, 16]);
    }
}
