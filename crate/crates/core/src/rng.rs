//! Keyed, counter-based random streams.
//!
//! Every random decision in the crate draws from an [`RngStream`] identified
//! by a master seed and a [`StreamKey`]. The generator is Philox4x64-10: the
//! key is `(seed, purpose << 56 | index)` and output word `c` of a stream is
//! word `c % 4` of the Philox block at counter `c / 4`. The output sequence is
//! therefore a pure function of `(seed, key, counter)`, so a stream can be
//! recreated anywhere, on any worker or rank, and yield the same values.
//!
//! Trees are keyed by their global index rather than by the worker or rank
//! that builds them. That is what makes every engine produce identical
//! forests regardless of how the tree indices are distributed.

const PHILOX_M0: u64 = 0xD2E7_470E_E14C_6C93;
const PHILOX_M1: u64 = 0xCA5A_8263_9512_1157;
const PHILOX_W0: u64 = 0x9E37_79B9_7F4A_7C15;
const PHILOX_W1: u64 = 0xBB67_AE85_84CA_A73B;
const PHILOX_ROUNDS: usize = 10;

/// Largest index representable in a [`StreamKey`].
pub const MAX_STREAM_INDEX: u64 = (1 << 56) - 1;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    Split = 1,
    Tree = 2,
    Synth = 3,
    Fuzz = 4,
}

/// Identifies one logical random decision, e.g. `(Tree, 17)` for global tree 17.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamKey {
    pub purpose: Purpose,
    pub index: u64,
}

impl StreamKey {
    /// Panics if `index` exceeds [`MAX_STREAM_INDEX`].
    pub fn new(purpose: Purpose, index: u64) -> Self {
        assert!(index <= MAX_STREAM_INDEX, "stream index {index} out of range");
        StreamKey { purpose, index }
    }

    pub fn split() -> Self {
        StreamKey::new(Purpose::Split, 0)
    }

    pub fn tree(global_index: u64) -> Self {
        StreamKey::new(Purpose::Tree, global_index)
    }

    pub fn synth() -> Self {
        StreamKey::new(Purpose::Synth, 0)
    }

    pub fn fuzz(index: u64) -> Self {
        StreamKey::new(Purpose::Fuzz, index)
    }

    fn word(&self) -> u64 {
        ((self.purpose as u64) << 56) | self.index
    }
}

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let p = (a as u128) * (b as u128);
    (p as u64, (p >> 64) as u64)
}

/// One Philox4x64-10 block.
pub fn philox4x64(counter: [u64; 4], key: [u64; 2]) -> [u64; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..PHILOX_ROUNDS {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (lo0, hi0) = mulhilo(PHILOX_M0, c[0]);
        let (lo1, hi1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// A position in one keyed stream.
///
/// Each `next_u64` advances the counter by exactly one position. Other draws
/// are built from `next_u64` and advance by however many words they consume.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    key: StreamKey,
    counter: u64,
    block_index: u64,
    block: [u64; 4],
}

/// Creates a stream at counter 0.
pub fn make_stream(seed: u64, key: StreamKey) -> RngStream {
    RngStream::new(seed, key)
}

impl RngStream {
    pub fn new(seed: u64, key: StreamKey) -> Self {
        Self::at(seed, key, 0)
    }

    /// Creates a stream positioned at an arbitrary counter.
    pub fn at(seed: u64, key: StreamKey, counter: u64) -> Self {
        let block_index = counter / 4;
        RngStream { seed, key, counter, block_index, block: philox4x64([block_index, 0, 0, 0], [seed, key.word()]) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let block_index = self.counter / 4;
        if block_index != self.block_index {
            self.block_index = block_index;
            self.block = philox4x64([block_index, 0, 0, 0], [self.seed, self.key.word()]);
        }
        let out = self.block[(self.counter % 4) as usize];
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform in `[0, 1)` from the top 53 bits of one word.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased integer in `[0, m)` by rejection. Panics if `m == 0`.
    pub fn rand_below(&mut self, m: u64) -> u64 {
        assert!(m >= 1, "rand_below requires m >= 1");
        // 2^64 mod m: words below this value would bias the low residues.
        let threshold = m.wrapping_neg() % m;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % m;
            }
        }
    }

    /// `k` indices drawn uniformly from `[0, m)` with replacement.
    pub fn sample_with_replacement(&mut self, m: usize, k: usize) -> Vec<usize> {
        assert!(m >= 1 || k == 0, "cannot sample from an empty population");
        (0..k).map(|_| self.rand_below(m as u64) as usize).collect()
    }

    /// `k` distinct indices from `[0, m)`, in draw order (a partial Fisher-Yates shuffle).
    pub fn sample_without_replacement(&mut self, m: usize, k: usize) -> Result<Vec<usize>, SampleError> {
        if k > m {
            return Err(SampleError { requested: k, population: m });
        }
        let mut pool: Vec<usize> = (0..m).collect();
        for i in 0..k {
            let j = i + self.rand_below((m - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        Ok(pool)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot draw {requested} distinct items from a population of {population}")]
pub struct SampleError {
    pub requested: usize,
    pub population: usize,
}
