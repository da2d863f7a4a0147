//! Runtime-versus-worker-count sweeps.

use std::io::Write;

use super::config::{BenchRecord, Mode, RunConfig};
use super::run::{run_group_threads, run_multicore, run_serial, ThreadTransport};
use super::EngineError;

/// Runs one distributed (spmd or hybrid) cell and returns rank 0's record.
pub trait SpmdExecutor {
    fn run(&self, cfg: &RunConfig) -> Result<BenchRecord, EngineError>;
}

/// Ranks as threads of this process, joined by loopback TCP or channels.
#[derive(Debug, Clone, Copy)]
pub struct ThreadExecutor(pub ThreadTransport);

impl SpmdExecutor for ThreadExecutor {
    fn run(&self, cfg: &RunConfig) -> Result<BenchRecord, EngineError> {
        let reports = run_group_threads(cfg, self.0)?;
        reports
            .into_iter()
            .next()
            .and_then(|r| r.record)
            .ok_or_else(|| EngineError::Config("rank 0 produced no record".into()))
    }
}

/// What to sweep. Counts are worker counts for `mc` and rank counts for
/// `spmd` and `hybrid`; hybrid cells keep `base.workers` threads per rank.
/// `serial` runs a single cell at count 1.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub base: RunConfig,
    pub modes: Vec<Mode>,
    pub counts: Vec<usize>,
    pub repetitions: usize,
}

/// Median timings of one (mode, count) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub mode: Mode,
    pub workers: usize,
    pub ranks: usize,
    pub repetitions: usize,
    pub median_train_s: f64,
    pub median_predict_s: f64,
    pub median_total_s: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<BenchRecord>,
    pub cells: Vec<CellSummary>,
}

impl SweepResult {
    pub fn cell(&self, mode: Mode, count: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| {
            c.mode == mode
                && match mode {
                    Mode::Mc => c.workers == count,
                    Mode::Serial => true,
                    Mode::Spmd | Mode::Hybrid => c.ranks == count,
                }
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// The (mode, count) cells of a sweep in output order.
pub fn sweep_cells(sweep: &Sweep) -> Vec<(Mode, usize)> {
    let mut modes = sweep.modes.clone();
    modes.sort();
    modes.dedup();
    let mut counts = sweep.counts.clone();
    counts.sort_unstable();
    counts.dedup();
    modes
        .into_iter()
        .flat_map(|m| {
            let counts = if m == Mode::Serial { vec![1] } else { counts.clone() };
            counts.into_iter().map(move |c| (m, c))
        })
        .collect()
}

fn cell_config(base: &RunConfig, mode: Mode, count: usize) -> RunConfig {
    let mut cfg = base.clone().with_mode(mode);
    match mode {
        Mode::Serial => {
            cfg.workers = 1;
            cfg.ranks = 1;
        }
        Mode::Mc => {
            cfg.workers = count;
            cfg.ranks = 1;
        }
        Mode::Spmd => {
            cfg.workers = 1;
            cfg.ranks = count;
        }
        Mode::Hybrid => cfg.ranks = count,
    }
    cfg
}

/// Runs every cell `repetitions` times, writing each record to `csv` as soon
/// as it completes so a failure leaves the finished rows behind.
/// Repetitions go round-robin over the cells (every cell once, then every
/// cell again), so slow drift in machine load spreads evenly over the cells
/// instead of landing on whichever ran last. `records` is sorted by (mode,
/// count, repetition); the CSV keeps execution order.
pub fn bench_sweep<W: Write>(sweep: &Sweep, spmd: &dyn SpmdExecutor, csv: W) -> Result<SweepResult, EngineError> {
    if sweep.counts.is_empty() || sweep.modes.is_empty() {
        return Err(EngineError::Config("a sweep needs at least one mode and one count".into()));
    }
    if sweep.repetitions == 0 {
        return Err(EngineError::Config("a sweep needs at least one repetition".into()));
    }
    if sweep.counts.contains(&0) {
        return Err(EngineError::Config("worker and rank counts must be at least 1".into()));
    }
    let mut writer = csv::Writer::from_writer(csv);
    let plan: Vec<(Mode, RunConfig)> =
        sweep_cells(sweep).into_iter().map(|(mode, count)| (mode, cell_config(&sweep.base, mode, count))).collect();
    let mut by_cell: Vec<Vec<BenchRecord>> = vec![Vec::with_capacity(sweep.repetitions); plan.len()];
    for _ in 0..sweep.repetitions {
        for ((mode, cfg), cell) in plan.iter().zip(by_cell.iter_mut()) {
            let rec = match mode {
                Mode::Serial => run_serial(cfg)?.record.expect("serial always records"),
                Mode::Mc => run_multicore(cfg)?.record.expect("mc always records"),
                Mode::Spmd | Mode::Hybrid => spmd.run(cfg)?,
            };
            writer.serialize(&rec)?;
            writer.flush()?;
            cell.push(rec);
        }
    }
    let mut records = Vec::new();
    let mut cells = Vec::new();
    for ((mode, _), cell) in plan.into_iter().zip(by_cell) {
        let col = |f: fn(&BenchRecord) -> f64| median(&cell.iter().map(f).collect::<Vec<_>>());
        cells.push(CellSummary {
            mode,
            workers: cell[0].workers,
            ranks: cell[0].ranks,
            repetitions: cell.len(),
            median_train_s: col(|r| r.train_time_s),
            median_predict_s: col(|r| r.predict_time_s),
            median_total_s: col(|r| r.total_time_s),
            accuracy: cell[0].accuracy,
        });
        records.extend(cell);
    }
    Ok(SweepResult { records, cells })
}

/// Whitespace-separated median table; loads directly into gnuplot, e.g.
/// `plot 'medians.dat' using 2:6 with linespoints`.
pub fn write_median_table<W: Write>(cells: &[CellSummary], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# mode workers ranks reps median_train_s median_total_s median_predict_s accuracy")?;
    for c in cells {
        let count = if c.mode.is_distributed() { c.ranks * c.workers } else { c.workers };
        writeln!(
            w,
            "{:<7} {:>3} {:>3} {:>3} {:>10.4} {:>10.4} {:>10.4} {:.6}   # {} cores",
            c.mode.as_str(),
            c.workers,
            c.ranks,
            c.repetitions,
            c.median_train_s,
            c.median_total_s,
            c.median_predict_s,
            c.accuracy,
            count
        )?;
    }
    Ok(())
}

/// Reads records written by [`bench_sweep`] or `rf run --out`.
pub fn read_records<R: std::io::Read>(reader: R) -> Result<Vec<BenchRecord>, EngineError> {
    csv::Reader::from_reader(reader).deserialize().collect::<Result<Vec<_>, _>>().map_err(EngineError::from)
}
