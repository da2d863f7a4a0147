//! Random forest classification with three interchangeable execution engines:
//! serial, shared-memory chunked-parallel, and SPMD message passing over a
//! small collective-communication layer. A hybrid engine nests the
//! shared-memory engine inside each SPMD rank.
//!
//! Every tree draws its randomness from a stream keyed by its global tree
//! index, so all engines produce the same forest and the same predictions
//! for any worker or rank count.

pub mod comm;
pub mod data;
pub mod engine;
pub mod forest;
pub mod partition;
pub mod rng;

pub use comm::{CommError, Communicator};
pub use data::{load_dataset, synth_dataset, train_test_split, CsvFormat, DataError, Dataset, TrainTestSplit};
pub use engine::{BenchRecord, DataSource, EngineError, Mode, RunConfig, RunReport};
pub use forest::{
    accuracy, build_forest_block, build_tree, combine, deserialize_tree, predict_forest, serialize_tree, DecisionTree,
    Forest, ForestError, ForestParams, RowMatrix,
};
pub use partition::{block_indices, chunk_sizes, ChunkPlan, PartitionError};
pub use rng::{make_stream, Purpose, RngStream, StreamKey};
