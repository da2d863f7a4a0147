use std::ops::Range;
use std::thread;
use std::time::Instant;

use crate::comm::{local, socket, Communicator};
use crate::data::{load_dataset, synth_dataset, train_test_split, CsvFormat, Dataset};
use crate::forest::{
    build_forest_block, combine, count_correct, deserialize_trees, predict_forest, serialize_trees, Forest, RowMatrix,
};
use crate::partition::{block_indices, chunk_sizes};
use crate::rng::{make_stream, StreamKey};

use super::config::{BenchRecord, DataSource, Mode, RunConfig};
use super::EngineError;

/// Outcome of one engine run in one process.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// `None` on non-root ranks of a distributed run.
    pub record: Option<BenchRecord>,
    /// Predictions for the test rows this process handled.
    pub predictions: Vec<u32>,
    /// Position of `predictions[0]` within the test set.
    pub test_offset: usize,
    /// Trees built by each worker (mc) or each rank (spmd, hybrid).
    pub tree_counts: Vec<usize>,
    /// Trees built by each worker thread of this process.
    pub local_tree_counts: Vec<usize>,
}

/// Training and test sets after the seeded split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads or generates the data and applies the split drawn from stream
/// `(split, 0)`. Every engine and every rank arrives at the same sets.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, EngineError> {
    let ds = match &cfg.data {
        DataSource::Csv(path) => load_dataset(path, CsvFormat::LETTER)?,
        DataSource::Synth { n, p, classes } => {
            synth_dataset(*n, *p, *classes, &mut make_stream(cfg.seed, StreamKey::synth()))?
        }
    };
    let split = train_test_split(ds.n_rows(), cfg.test_frac, &mut make_stream(cfg.seed, StreamKey::split()))?;
    if split.train_indices.is_empty() {
        return Err(EngineError::Config("split leaves no training rows".into()));
    }
    Ok(Prepared { train: ds.subset(&split.train_indices), test: ds.subset(&split.test_indices) })
}

fn tree_range(range: Range<usize>) -> Vec<u64> {
    (range.start as u64..range.end as u64).collect()
}

/// Builds trees `indices` with one thread per non-empty chunk.
fn build_parallel(
    train: &Dataset,
    cfg: &RunConfig,
    indices: Range<usize>,
    workers: usize,
) -> Result<(Forest, Vec<usize>), EngineError> {
    let plan = chunk_sizes(indices.len(), workers)?;
    let blocks = thread::scope(|s| {
        let handles: Vec<_> = plan
            .ranges()
            .filter(|r| !r.is_empty())
            .map(|r| {
                let ids = tree_range(indices.start + r.start..indices.start + r.end);
                s.spawn(move || build_forest_block(train, &cfg.params, &ids, cfg.seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("tree worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let forest = if blocks.is_empty() {
        Forest::empty(train.n_classes(), train.n_features(), cfg.params.clone())
    } else {
        combine(blocks)?
    };
    Ok((forest, plan.sizes().to_vec()))
}

/// Predicts contiguous row blocks on `workers` threads and concatenates them in order.
fn predict_parallel(forest: &Forest, rows: RowMatrix<'_>, workers: usize) -> Result<Vec<u32>, EngineError> {
    let plan = chunk_sizes(rows.n_rows(), workers)?;
    if plan.sizes().iter().filter(|&&s| s > 0).count() <= 1 {
        return Ok(predict_forest(forest, rows)?);
    }
    let parts = thread::scope(|s| {
        let handles: Vec<_> = plan
            .ranges()
            .filter(|r| !r.is_empty())
            .map(|r| s.spawn(move || predict_forest(forest, rows.slice(r))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(parts.concat())
}

fn accuracy_of(correct: usize, total: usize) -> Result<f64, EngineError> {
    if total == 0 {
        return Err(EngineError::Config("test set is empty; nothing to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Builds every tree in order on the calling thread, then predicts every test row.
pub fn run_serial(cfg: &RunConfig) -> Result<RunReport, EngineError> {
    cfg.validate().map_err(EngineError::Config)?;
    let start = Instant::now();
    let Prepared { train, test } = prepare(cfg)?;

    let t = Instant::now();
    let forest = build_forest_block(&train, &cfg.params, &tree_range(0..cfg.n_trees()), cfg.seed)?;
    let train_time = t.elapsed();

    let t = Instant::now();
    let predictions = predict_forest(&forest, test.matrix())?;
    let correct = count_correct(&predictions, test.labels())?;
    let predict_time = t.elapsed();

    let record = BenchRecord {
        mode: Mode::Serial,
        workers: 1,
        ranks: 1,
        trees: cfg.n_trees(),
        seed: cfg.seed,
        train_time_s: train_time.as_secs_f64(),
        predict_time_s: predict_time.as_secs_f64(),
        total_time_s: start.elapsed().as_secs_f64(),
        accuracy: accuracy_of(correct, test.n_rows())?,
    };
    Ok(RunReport {
        record: Some(record),
        predictions,
        test_offset: 0,
        tree_counts: vec![cfg.n_trees()],
        local_tree_counts: vec![cfg.n_trees()],
    })
}

/// Shared-memory engine: one chunk of trees per worker, then one chunk of
/// test rows per worker, all against the same in-memory data.
pub fn run_multicore(cfg: &RunConfig) -> Result<RunReport, EngineError> {
    cfg.validate().map_err(EngineError::Config)?;
    let start = Instant::now();
    let Prepared { train, test } = prepare(cfg)?;

    let t = Instant::now();
    let (forest, tree_counts) = build_parallel(&train, cfg, 0..cfg.n_trees(), cfg.workers)?;
    let train_time = t.elapsed();

    let t = Instant::now();
    let predictions = predict_parallel(&forest, test.matrix(), cfg.workers)?;
    let correct = count_correct(&predictions, test.labels())?;
    let predict_time = t.elapsed();

    let record = BenchRecord {
        mode: Mode::Mc,
        workers: cfg.workers,
        ranks: 1,
        trees: cfg.n_trees(),
        seed: cfg.seed,
        train_time_s: train_time.as_secs_f64(),
        predict_time_s: predict_time.as_secs_f64(),
        total_time_s: start.elapsed().as_secs_f64(),
        accuracy: accuracy_of(correct, test.n_rows())?,
    };
    Ok(RunReport {
        record: Some(record),
        predictions,
        test_offset: 0,
        local_tree_counts: tree_counts.clone(),
        tree_counts,
    })
}

/// SPMD engine. Must be called by every rank of `comm` with the same config.
///
/// Each rank loads all the data and draws the same split, builds its block of
/// global tree indices, allgathers the serialized blocks and combines them
/// into the full forest, predicts its block of test rows and sums the correct
/// counts at rank 0. Only rank 0's report carries a record. The caller is
/// responsible for printing and for `finalize`.
pub fn run_spmd(comm: &mut Communicator, cfg: &RunConfig) -> Result<RunReport, EngineError> {
    run_distributed(comm, cfg, Mode::Spmd, 1)
}

/// SPMD across ranks plus `cfg.workers` threads inside each rank.
pub fn run_hybrid(comm: &mut Communicator, cfg: &RunConfig) -> Result<RunReport, EngineError> {
    run_distributed(comm, cfg, Mode::Hybrid, cfg.workers)
}

fn run_distributed(
    comm: &mut Communicator,
    cfg: &RunConfig,
    mode: Mode,
    workers: usize,
) -> Result<RunReport, EngineError> {
    cfg.validate().map_err(EngineError::Config)?;
    let (rank, size) = (comm.rank(), comm.size());

    let digests = comm.allgather(&cfg.digest().to_le_bytes())?;
    if let Some(r) = digests.iter().position(|d| d[..] != digests[0][..]) {
        return Err(EngineError::ConfigMismatch { rank: r });
    }

    comm.barrier()?;
    let start = Instant::now();
    let Prepared { train, test } = prepare(cfg)?;

    let t = Instant::now();
    let mine = block_indices(cfg.n_trees(), size, rank)?;
    let (block, local_tree_counts) = build_parallel(&train, cfg, mine, workers)?;
    let gathered = comm.allgather(&serialize_trees(block.trees()))?;
    let mut blocks = Vec::with_capacity(size);
    for bytes in &gathered {
        let trees = deserialize_trees(bytes).map_err(crate::forest::ForestError::from)?;
        blocks.push(Forest::from_trees(trees, train.n_classes(), train.n_features(), cfg.params.clone())?);
    }
    let tree_counts = blocks.iter().map(Forest::len).collect();
    let forest = combine(blocks)?;
    let train_time = t.elapsed();

    let t = Instant::now();
    let rows = block_indices(test.n_rows(), size, rank)?;
    let predictions = predict_parallel(&forest, test.matrix().slice(rows.clone()), workers)?;
    let correct = count_correct(&predictions, &test.labels()[rows.clone()])?;
    let totals = comm.reduce_sum(&[correct as u64, predictions.len() as u64], 0)?;
    let predict_time = t.elapsed();

    comm.barrier()?;
    let total_time = start.elapsed();

    let record = match totals {
        Some(t) => Some(BenchRecord {
            mode,
            workers,
            ranks: size,
            trees: cfg.n_trees(),
            seed: cfg.seed,
            train_time_s: train_time.as_secs_f64(),
            predict_time_s: predict_time.as_secs_f64(),
            total_time_s: total_time.as_secs_f64(),
            accuracy: accuracy_of(t[0] as usize, t[1] as usize)?,
        }),
        None => None,
    };
    Ok(RunReport { record, predictions, test_offset: rows.start, tree_counts, local_tree_counts })
}

/// Runs an spmd or hybrid config as a group of `ranks` threads over the given transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreadTransport {
    Channels,
    Sockets,
}

/// Runs a distributed config with `cfg.ranks` ranks as threads of this
/// process and returns every rank's report in rank order.
pub fn run_group_threads(cfg: &RunConfig, transport: ThreadTransport) -> Result<Vec<RunReport>, EngineError> {
    let body = |mut comm: Communicator| -> Result<RunReport, EngineError> {
        let report = match cfg.mode {
            Mode::Hybrid => run_hybrid(&mut comm, cfg),
            _ => run_spmd(&mut comm, cfg),
        }?;
        comm.finalize()?;
        Ok(report)
    };
    let reports = match transport {
        ThreadTransport::Channels => local::run_local(cfg.ranks, body),
        ThreadTransport::Sockets => socket::run_socket_group(cfg.ranks, body)?,
    };
    reports.into_iter().collect()
}

/// Concatenates per-rank predictions in test-row order.
pub fn assemble_predictions(reports: &[RunReport]) -> Vec<u32> {
    let mut ordered: Vec<&RunReport> = reports.iter().collect();
    ordered.sort_by_key(|r| r.test_offset);
    ordered.iter().flat_map(|r| r.predictions.iter().copied()).collect()
}

/// Dispatches on `cfg.mode`. Distributed modes join the group described by
/// the environment (a group of one without a launcher), print the accuracy
/// on rank 0 and finalize.
pub fn run(cfg: &RunConfig) -> Result<RunReport, EngineError> {
    match cfg.mode {
        Mode::Serial => run_serial(cfg),
        Mode::Mc => run_multicore(cfg),
        Mode::Spmd | Mode::Hybrid => {
            let mut comm = Communicator::from_env()?;
            let report = if cfg.mode == Mode::Spmd { run_spmd(&mut comm, cfg) } else { run_hybrid(&mut comm, cfg) };
            let report = match report {
                Ok(r) => r,
                Err(e) => {
                    let _ = comm.finalize();
                    return Err(e);
                }
            };
            if let Some(rec) = &report.record {
                comm.root_print(&format!("accuracy {:.6}", rec.accuracy))?;
            }
            comm.finalize()?;
            Ok(report)
        }
    }
}
