//! Shared fixtures for the criterion benchmarks.

use parforest::{make_stream, synth_dataset, Dataset, StreamKey};

/// A letter-sized synthetic training set: 16 integer features, 26 classes.
pub fn letter_like(n: usize, seed: u64) -> Dataset {
    synth_dataset(n, 16, 26, &mut make_stream(seed, StreamKey::synth())).expect("valid synthetic shape")
}
