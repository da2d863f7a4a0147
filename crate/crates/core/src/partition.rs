//! Static near-equal partitioning of work across workers or ranks.

use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("cannot partition work across zero workers")]
    ZeroWorkers,
    #[error("rank {rank} is out of range for a group of size {size}")]
    RankOutOfRange { rank: usize, size: usize },
}

/// A near-equal division of `total` items into `k` contiguous chunks.
///
/// The first `total % k` chunks carry one extra item. Chunks may be empty
/// when there are more workers than items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    total: usize,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl ChunkPlan {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// The index range owned by chunk `i`.
    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i] + self.sizes[i]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.k()).map(move |i| self.range(i))
    }
}

pub fn chunk_sizes(total: usize, k: usize) -> Result<ChunkPlan, PartitionError> {
    if k == 0 {
        return Err(PartitionError::ZeroWorkers);
    }
    let base = total / k;
    let rem = total % k;
    let sizes: Vec<usize> = (0..k).map(|i| base + usize::from(i < rem)).collect();
    let offsets = sizes
        .iter()
        .scan(0, |acc, &s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect();
    Ok(ChunkPlan { total, sizes, offsets })
}

/// The contiguous block of `0..n` owned by `rank` in a group of `size`.
pub fn block_indices(n: usize, size: usize, rank: usize) -> Result<Range<usize>, PartitionError> {
    if size == 0 {
        return Err(PartitionError::ZeroWorkers);
    }
    if rank >= size {
        return Err(PartitionError::RankOutOfRange { rank, size });
    }
    let base = n / size;
    let rem = n % size;
    let start = rank * base + rank.min(rem);
    let len = base + usize::from(rank < rem);
    Ok(start..start + len)
}
