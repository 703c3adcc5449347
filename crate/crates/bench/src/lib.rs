//! Benchmark harness for the split-annotation runtime.
//!
//! Workloads run in three modes: `baseline-eager` calls the library one
//! function at a time, each call spread over the threads; `sa-nopipe` and
//! `sa-pipe` run the same calls through a session with pipelining off and on.
//! Every mode must produce the same checksum.

pub mod demos;
pub mod experiments;
pub mod measure;
pub mod program;
pub mod sysinfo;
pub mod workloads;

pub use measure::{measure, median, BenchError, Measurement, Mode, Row, Settings, Workload};
pub use program::{Kernel, Program};
