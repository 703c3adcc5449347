//! Timing a workload in one of the three execution modes.

use std::fmt;
use std::time::Instant;

use serde::Serialize;
use splitann::{ExecConfig, LazyHandle, Session, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Runtime(#[from] splitann::Error),
    #[error("{workload}: {mode} checksum {got:016x} differs from baseline {expected:016x}")]
    ChecksumMismatch { workload: String, mode: String, expected: u64, got: u64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Something the harness can run eagerly or through a session.
pub trait Workload {
    fn name(&self) -> String;

    /// Restores inputs that a run modifies in place.
    fn reset(&self) {}

    fn run_eager(&self, threads: usize);

    /// Captures the workload's calls; the handles are forced after
    /// evaluation and passed to [`Workload::keep`].
    fn capture(&self, s: &mut Session) -> Result<Vec<LazyHandle>, splitann::Error>;

    fn keep(&self, _results: Vec<Value>) {}

    /// Digest of the outputs of the most recent run.
    fn checksum(&self) -> u64;
}

/// Runs every captured call of `w` through `s`.
pub fn run_session(w: &dyn Workload, s: &mut Session) -> Result<(), splitann::Error> {
    let handles = w.capture(s)?;
    s.evaluate()?;
    let results = handles.iter().map(|h| s.force(h)).collect::<Result<Vec<_>, _>>()?;
    w.keep(results);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Un-annotated library: one call at a time over the whole input.
    BaselineEager,
    SaNopipe,
    SaPipe,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::BaselineEager, Mode::SaNopipe, Mode::SaPipe];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::BaselineEager => "baseline-eager",
            Mode::SaNopipe => "sa-nopipe",
            Mode::SaPipe => "sa-pipe",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub threads: usize,
    pub batch: Option<usize>,
    pub l2_bytes: usize,
    pub c_constant: f64,
    pub pedantic: bool,
    pub runs: usize,
}

impl Settings {
    pub fn exec_config(&self, pipelining: bool) -> ExecConfig {
        ExecConfig {
            threads: self.threads.max(1),
            batch_override: self.batch,
            l2_bytes: self.l2_bytes,
            c_constant: self.c_constant,
            pipelining,
            pedantic: self.pedantic,
            trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub workload: String,
    pub mode: Mode,
    pub threads: usize,
    /// Batch size of the first stage; `None` for the eager baseline.
    pub batch: Option<usize>,
    /// Median over the timed runs.
    pub wall_ms: f64,
    /// Median time spent capturing and planning calls.
    pub overhead_ms: f64,
    pub checksum: u64,
}

impl Measurement {
    pub fn row(&self) -> Row {
        Row {
            workload: self.workload.clone(),
            mode: self.mode.to_string(),
            threads: self.threads,
            batch: self.batch,
            wall_ms: self.wall_ms,
            checksum: format!("{:016x}", self.checksum),
        }
    }
}

/// One CSV record.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub workload: String,
    pub mode: String,
    pub threads: usize,
    pub batch: Option<usize>,
    pub wall_ms: f64,
    pub checksum: String,
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Runs `w` once untimed, then `settings.runs` timed runs, and reports the
/// median. The untimed run touches freshly allocated pages.
pub fn measure(w: &dyn Workload, mode: Mode, settings: &Settings) -> Result<Measurement, BenchError> {
    let runs = settings.runs.max(1);
    let mut walls = Vec::with_capacity(runs);
    let mut overheads = Vec::with_capacity(runs);
    let mut batch = None;
    match mode {
        Mode::BaselineEager => {
            for i in 0..=runs {
                w.reset();
                let t = Instant::now();
                w.run_eager(settings.threads);
                if i > 0 {
                    walls.push(t.elapsed().as_secs_f64() * 1e3);
                    overheads.push(0.0);
                }
            }
        }
        Mode::SaNopipe | Mode::SaPipe => {
            let mut s = Session::with_config(settings.exec_config(mode == Mode::SaPipe));
            splitann_demolibs::register_all(&mut s)?;
            for i in 0..=runs {
                w.reset();
                let before = s.stats();
                let t = Instant::now();
                run_session(w, &mut s)?;
                let wall = t.elapsed().as_secs_f64() * 1e3;
                let after = s.stats();
                if i > 0 {
                    walls.push(wall);
                    let ns = (after.register_ns - before.register_ns) + (after.plan_ns - before.plan_ns);
                    overheads.push(ns as f64 / 1e6);
                }
            }
            batch = s.last_report().and_then(|r| r.stages.first()).map(|st| st.batch);
        }
    }
    Ok(Measurement {
        workload: w.name(),
        mode,
        threads: settings.threads,
        batch,
        wall_ms: median(walls),
        overhead_ms: median(overheads),
        checksum: w.checksum(),
    })
}
