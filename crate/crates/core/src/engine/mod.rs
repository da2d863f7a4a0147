//! Execution engines, the benchmark sweep, and the shared run configuration.

mod bench;
mod config;
mod run;

pub use bench::{
    bench_sweep, median, read_records, sweep_cells, write_median_table, CellSummary, SpmdExecutor, Sweep, SweepResult,
    ThreadExecutor,
};
pub use config::{BenchRecord, DataSource, Mode, RunConfig, CSV_HEADER};
pub use run::{
    assemble_predictions, prepare, run, run_group_threads, run_hybrid, run_multicore, run_serial, run_spmd, Prepared,
    RunReport, ThreadTransport,
};

use crate::comm::CommError;
use crate::data::DataError;
use crate::forest::ForestError;
use crate::partition::PartitionError;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("rank {rank} was started with a different configuration than rank 0")]
    ConfigMismatch { rank: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl EngineError {
    /// True for failures of the distributed protocol rather than of the
    /// computation itself.
    pub fn is_distributed(&self) -> bool {
        matches!(self, EngineError::Comm(_) | EngineError::ConfigMismatch { .. })
    }
}

/// Writes one record with the CSV header.
pub fn write_record<W: std::io::Write>(record: &BenchRecord, w: W) -> Result<(), EngineError> {
    let mut writer = csv::Writer::from_writer(w);
    writer.serialize(record)?;
    writer.flush()?;
    Ok(())
}
