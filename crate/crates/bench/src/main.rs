use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use splitann::Session;
use splitann_bench::demos::{FilterDemo, NormalizeDemo, ReduceDemo};
use splitann_bench::experiments::{ablation, batch_sweep, intensity_study, thread_counts};
use splitann_bench::workloads::{black_scholes, elements_for, haversine, intensity, INTENSITY_KERNELS};
use splitann_bench::{sysinfo, BenchError, Mode, Row, Settings, Workload};

/// Runs a workload eagerly and through the split-annotation runtime and
/// prints one CSV row per measurement.
#[derive(Parser, Debug)]
#[command(name = "bench", version, about)]
struct Cli {
    #[arg(value_enum)]
    workload: WorkloadName,

    /// Worker threads [default: logical CPUs].
    #[arg(long, env = "BENCH_THREADS")]
    threads: Option<usize>,

    /// Elements per input array [default: inputs span 4x the last-level cache].
    #[arg(long, env = "BENCH_N")]
    n: Option<usize>,

    /// Fixed batch size in elements instead of the cache heuristic.
    #[arg(long, env = "BENCH_BATCH")]
    batch: Option<usize>,

    /// L2 size the batch heuristic targets [default: detected].
    #[arg(long, env = "BENCH_L2_BYTES")]
    l2_bytes: Option<usize>,

    /// Fraction of L2 one batch may occupy.
    #[arg(long, env = "BENCH_C_CONSTANT", default_value_t = 1.0)]
    c_constant: f64,

    /// Skip the pipelined mode.
    #[arg(long, env = "BENCH_NO_PIPELINE")]
    no_pipeline: bool,

    #[arg(long, env = "BENCH_PEDANTIC")]
    pedantic: bool,

    /// Write CSV here instead of stdout.
    #[arg(long, env = "BENCH_CSV")]
    csv: Option<PathBuf>,

    /// Print the execution plan and exit.
    #[arg(long, env = "BENCH_EXPLAIN")]
    explain: bool,

    #[arg(long, env = "BENCH_SEED", default_value_t = 42)]
    seed: u64,

    /// Timed runs per measurement; the median is reported.
    #[arg(long, env = "BENCH_RUNS", default_value_t = 5)]
    runs: usize,

    /// Sweep pipelined batch sizes 2^6..2^22 and add a row for the heuristic's choice.
    #[arg(long, env = "BENCH_SWEEP")]
    sweep: bool,

    /// Calls per kernel in the intensity study.
    #[arg(long, env = "BENCH_REPS", default_value_t = 10)]
    reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WorkloadName {
    Blackscholes,
    Haversine,
    Intensity,
    NormalizeDemo,
    ReduceDemo,
    FilterDemo,
}

fn default_n(w: WorkloadName) -> usize {
    let llc = sysinfo::llc_bytes();
    match (w, llc) {
        (WorkloadName::Blackscholes, Some(llc)) => elements_for(llc, 4, 4),
        (WorkloadName::Haversine, Some(llc)) => elements_for(llc, 4, 2),
        (WorkloadName::Intensity, Some(llc)) => elements_for(llc, 2, 1),
        (WorkloadName::Blackscholes | WorkloadName::Haversine | WorkloadName::Intensity, None) => 10_000_000,
        _ => 1 << 20,
    }
}

fn build(w: WorkloadName, n: usize, seed: u64) -> Box<dyn Workload> {
    match w {
        WorkloadName::Blackscholes => Box::new(black_scholes(n, seed)),
        WorkloadName::Haversine => Box::new(haversine(n, seed)),
        WorkloadName::Intensity => {
            let (op, kernel) = INTENSITY_KERNELS[0];
            Box::new(intensity(op, kernel, n, 10, seed))
        }
        WorkloadName::NormalizeDemo => Box::new(NormalizeDemo::new(n, seed)),
        WorkloadName::ReduceDemo => Box::new(ReduceDemo::new(n, seed)),
        WorkloadName::FilterDemo => Box::new(FilterDemo::new(n, seed)),
    }
}

fn explain(w: &dyn Workload, settings: &Settings) -> Result<String, BenchError> {
    let mut s = Session::with_config(settings.exec_config(true));
    splitann_demolibs::register_all(&mut s)?;
    w.capture(&mut s)?;
    Ok(s.explain()?)
}

fn run(cli: &Cli) -> Result<(), BenchError> {
    let n = cli.n.unwrap_or_else(|| default_n(cli.workload));
    let settings = Settings {
        threads: cli.threads.unwrap_or_else(sysinfo::logical_cpus).max(1),
        batch: cli.batch,
        l2_bytes: cli.l2_bytes.unwrap_or_else(sysinfo::l2_bytes),
        c_constant: cli.c_constant,
        pedantic: cli.pedantic,
        runs: cli.runs,
    };

    if cli.explain {
        let w = build(cli.workload, n.min(1 << 16), cli.seed);
        print!("{}", explain(w.as_ref(), &settings)?);
        return Ok(());
    }

    let mut rows: Vec<Row> = Vec::new();
    if cli.workload == WorkloadName::Intensity {
        let threads = match cli.threads {
            Some(t) => vec![t],
            None => thread_counts(sysinfo::logical_cpus()),
        };
        for point in intensity_study(&INTENSITY_KERNELS, n, cli.reps, &threads, &settings, cli.seed)? {
            eprintln!("{:>5} threads={:<3} speedup={:.2}", point.op, point.threads, point.speedup());
            rows.push(point.eager.row());
            rows.push(point.pipe.row());
        }
    } else {
        let w = build(cli.workload, n, cli.seed);
        if cli.sweep {
            let sweep = batch_sweep(w.as_ref(), &settings, 6..=22)?;
            rows.extend(sweep.points.iter().map(|m| m.row()));
            rows.push(Row { mode: "sa-pipe-auto".into(), ..sweep.auto.row() });
            eprintln!(
                "auto batch {} is {:.2}x the best fixed batch {}",
                sweep.auto.batch.unwrap_or(0),
                sweep.auto_ratio(),
                sweep.best().batch.unwrap_or(0)
            );
        } else {
            let modes: &[Mode] = if cli.no_pipeline { &Mode::ALL[..2] } else { &Mode::ALL };
            rows.extend(ablation(w.as_ref(), modes, &settings)?.iter().map(|m| m.row()));
        }
    }

    let sink: Box<dyn io::Write> = match &cli.csv {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(io::stdout()),
    };
    let mut out = csv::Writer::from_writer(sink);
    for row in &rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ BenchError::ChecksumMismatch { .. }) => {
            eprintln!("bench: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::FAILURE
        }
    }
}
