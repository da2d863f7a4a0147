//! `rf`: run, launch and benchmark the random forest engines.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 distributed
//! protocol error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::{ExitCode, Stdio};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use parforest::comm::launch::{launch, launch_with, ExitCode as ExitStatus, LaunchError};
use parforest::comm::Communicator;
use parforest::engine::{
    bench_sweep, read_records, run, write_median_table, write_record, BenchRecord, DataSource, EngineError, Mode,
    RunConfig, SpmdExecutor, Sweep, ThreadExecutor, ThreadTransport,
};
use parforest::ForestParams;

const USAGE: u8 = 1;
const RUNTIME: u8 = 2;
const PROTOCOL: u8 = 3;

#[derive(Parser)]
#[command(name = "rf", version, about = "Random forest with serial, multicore, SPMD and hybrid engines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one forest.
    Run(RunArgs),
    /// Start N copies of a command as an SPMD group, like `mpirun -np N`.
    Launch(LaunchArgs),
    /// Time the engines across worker or rank counts.
    Bench(BenchArgs),
    /// Minimal SPMD program: every rank checks in and rank 0 reports.
    SpmdDemo,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Labeled CSV in the letter-recognition layout.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    data: Option<PathBuf>,
    /// Synthetic data: n,p,classes.
    #[arg(long, value_name = "N,P,C")]
    synth: Option<DataSource>,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        match (&self.data, &self.synth) {
            (Some(p), _) => DataSource::Csv(p.clone()),
            (None, Some(s)) => s.clone(),
            (None, None) => unreachable!("clap enforces one data source"),
        }
    }
}

#[derive(Args, Clone)]
struct ForestArgs {
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    /// Features tried per split [default: floor(sqrt(p))].
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_node_size: usize,
    #[arg(long)]
    max_depth: Option<usize>,
}

impl ForestArgs {
    fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.trees,
            mtry: self.mtry,
            min_node_size: self.min_node_size,
            max_depth: self.max_depth,
            bootstrap_size: None,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "serial")]
    mode: Mode,
    /// Threads per process (mc, hybrid).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    forest: ForestArgs,
    /// Write the run's record as CSV (rank 0 only in distributed modes).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LaunchArgs {
    #[arg(long, short = 'n')]
    ranks: usize,
    /// Seconds to wait for every rank to join.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    /// The program and its arguments; `rf` refers to this executable.
    #[arg(last = true, required = true)]
    command: Vec<OsString>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SpmdTransport {
    /// One OS process per rank, started through the launcher.
    Process,
    /// Ranks as threads of this process over loopback TCP.
    Threads,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "mc,spmd")]
    modes: Vec<Mode>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Threads per rank for hybrid cells.
    #[arg(long, default_value_t = 2)]
    workers: usize,
    #[arg(long, value_enum, default_value = "process")]
    spmd_transport: SpmdTransport,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

fn run_config(mode: Mode, workers: usize, data: &DataArgs, forest: &ForestArgs, out: Option<PathBuf>) -> RunConfig {
    let mut cfg = RunConfig::new(mode, data.source());
    cfg.workers = workers;
    cfg.seed = forest.seed;
    cfg.test_frac = forest.test_frac;
    cfg.params = forest.params();
    cfg.out = out;
    cfg
}

fn engine_code(e: &EngineError) -> u8 {
    if e.is_distributed() {
        PROTOCOL
    } else {
        RUNTIME
    }
}

fn cmd_run(args: RunArgs) -> Result<(), (u8, String)> {
    let cfg = run_config(args.mode, args.workers, &args.data, &args.forest, args.out);
    cfg.validate().map_err(|e| (USAGE, e))?;
    let report = run(&cfg).map_err(|e| (engine_code(&e), e.to_string()))?;
    let Some(record) = report.record else {
        return Ok(());
    };
    if !cfg.mode.is_distributed() {
        println!("accuracy {:.6}", record.accuracy);
    }
    eprintln!(
        "{} workers={} ranks={} trees={} train {:.3}s predict {:.3}s total {:.3}s",
        record.mode,
        record.workers,
        record.ranks,
        record.trees,
        record.train_time_s,
        record.predict_time_s,
        record.total_time_s
    );
    if let Some(path) = &cfg.out {
        let file = File::create(path).map_err(|e| (RUNTIME, format!("{}: {e}", path.display())))?;
        write_record(&record, file).map_err(|e| (RUNTIME, e.to_string()))?;
    }
    Ok(())
}

fn resolve_program(program: &OsString) -> OsString {
    if program == "rf" {
        if let Ok(exe) = std::env::current_exe() {
            return exe.into_os_string();
        }
    }
    program.clone()
}

fn cmd_launch(args: LaunchArgs) -> Result<(), (u8, String)> {
    if args.ranks == 0 {
        return Err((USAGE, "--ranks must be at least 1".into()));
    }
    let program = resolve_program(&args.command[0]);
    let report =
        launch(args.ranks, &program, &args.command[1..], Duration::from_secs(args.timeout)).map_err(|e| match e {
            LaunchError::NoRanks => (USAGE, e.to_string()),
            LaunchError::EarlyExit { status: ExitStatus::Code(c @ 1..=255), .. } => (c as u8, e.to_string()),
            LaunchError::Rendezvous(_) => (PROTOCOL, e.to_string()),
            _ => (RUNTIME, e.to_string()),
        })?;
    if report.success() {
        return Ok(());
    }
    for (rank, status) in report.failures() {
        eprintln!("rf launch: rank {rank} failed ({status})");
    }
    let code = u8::try_from(report.overall_code()).unwrap_or(RUNTIME).max(1);
    Err((code, format!("{} of {} ranks failed", report.failures().len(), args.ranks)))
}

/// Runs each distributed cell as real processes through the launcher.
struct ProcessExecutor {
    exe: PathBuf,
    timeout: Duration,
}

impl SpmdExecutor for ProcessExecutor {
    fn run(&self, cfg: &RunConfig) -> Result<BenchRecord, EngineError> {
        let out = std::env::temp_dir().join(format!("rf-bench-{}-{}.csv", std::process::id(), cfg.ranks));
        let mut args: Vec<String> = vec![
            "run".into(),
            "--mode".into(),
            cfg.mode.to_string(),
            "--workers".into(),
            cfg.workers.to_string(),
            "--trees".into(),
            cfg.n_trees().to_string(),
            "--seed".into(),
            cfg.seed.to_string(),
            "--test-frac".into(),
            cfg.test_frac.to_string(),
            "--min-node-size".into(),
            cfg.params.min_node_size.to_string(),
            "--out".into(),
            out.display().to_string(),
        ];
        match &cfg.data {
            DataSource::Csv(p) => args.extend(["--data".into(), p.display().to_string()]),
            DataSource::Synth { n, p, classes } => args.extend(["--synth".into(), format!("{n},{p},{classes}")]),
        }
        if let Some(m) = cfg.params.mtry {
            args.extend(["--mtry".into(), m.to_string()]);
        }
        if let Some(d) = cfg.params.max_depth {
            args.extend(["--max-depth".into(), d.to_string()]);
        }
        let report = launch_with(cfg.ranks, &self.exe, &args, self.timeout, |_, cmd| {
            cmd.stdout(Stdio::null());
        })
        .map_err(|e| EngineError::Config(format!("launch failed: {e}")))?;
        if !report.success() {
            return Err(EngineError::Config(format!("spmd cell failed: {:?}", report.failures())));
        }
        let records = read_records(File::open(&out)?)?;
        let _ = std::fs::remove_file(&out);
        records.into_iter().next().ok_or_else(|| EngineError::Config("spmd run wrote no record".into()))
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), (u8, String)> {
    let base = run_config(Mode::Mc, args.workers, &args.data, &args.forest, None);
    base.validate().map_err(|e| (USAGE, e))?;
    let sweep = Sweep { base, modes: args.modes, counts: args.counts, repetitions: args.reps };
    let file = File::create(&args.out).map_err(|e| (RUNTIME, format!("{}: {e}", args.out.display())))?;
    let exe = std::env::current_exe().map_err(|e| (RUNTIME, e.to_string()))?;
    let process = ProcessExecutor { exe, timeout: Duration::from_secs(30) };
    let threads = ThreadExecutor(ThreadTransport::Sockets);
    let executor: &dyn SpmdExecutor = match args.spmd_transport {
        SpmdTransport::Process => &process,
        SpmdTransport::Threads => &threads,
    };
    let result = bench_sweep(&sweep, executor, file).map_err(|e| (engine_code(&e), e.to_string()))?;
    write_median_table(&result.cells, io::stdout().lock()).map_err(|e| (RUNTIME, e.to_string()))?;
    Ok(())
}

fn cmd_spmd_demo() -> Result<(), (u8, String)> {
    let proto = |e: parforest::CommError| (PROTOCOL, e.to_string());
    let mut comm = Communicator::from_env().map_err(proto)?;
    let ranks = comm.allgather(&(comm.rank() as u32).to_le_bytes()).map_err(proto)?;
    let ranks: Vec<u32> = ranks.iter().map(|b| u32::from_le_bytes(b[..4].try_into().unwrap_or([0xff; 4]))).collect();
    let ones = comm.reduce_sum(&[1u64], 0).map_err(proto)?;
    if let Some(total) = ones {
        let expected: Vec<u32> = (0..comm.size() as u32).collect();
        if ranks != expected || total[0] != comm.size() as u64 {
            return Err((PROTOCOL, format!("group inconsistent: ranks {ranks:?}, count {}", total[0])));
        }
    }
    comm.root_print(&format!("spmd-demo: {} ranks checked in", comm.size())).map_err(|e| (RUNTIME, e.to_string()))?;
    comm.finalize().map_err(proto)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Launch(a) => cmd_launch(a),
        Command::Bench(a) => cmd_bench(a),
        Command::SpmdDemo => cmd_spmd_demo(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            let _ = writeln!(io::stderr(), "rf: {msg}");
            ExitCode::from(code)
        }
    }
}
