//! Gini split search.
//!
//! Minimizing the weighted child Gini impurity is the same as maximizing
//! `sum(l_c^2) / n_l + sum(r_c^2) / n_r`. Both terms are ratios of integers,
//! so candidates are compared exactly in `u128` arithmetic. Ties therefore
//! resolve the same way everywhere: lowest feature index first, then lowest
//! threshold.

use crate::data::Dataset;

/// Gini impurity `1 - sum(p_c^2)` of a class tally.
pub fn gini(counts: &[u32]) -> f64 {
    let n: u64 = counts.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return 0.0;
    }
    let sq: u64 = counts.iter().map(|&c| (c as u64) * (c as u64)).sum();
    1.0 - sq as f64 / (n as f64 * n as f64)
}

/// A chosen split of a node's rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    /// Rows with `value <= threshold` go left.
    pub threshold: f64,
    pub n_left: usize,
    /// Parent impurity minus the size-weighted child impurities.
    pub decrease: f64,
}

#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Reusable buffers for [`SplitSearch::best`].
#[derive(Debug, Default)]
pub struct SplitSearch {
    pairs: Vec<(f64, u32)>,
    left: Vec<u64>,
    right: Vec<u64>,
}

impl SplitSearch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Best split of `rows` over the `candidates` features, or `None` when no
    /// split strictly decreases the impurity. `candidates` is scanned in
    /// ascending order regardless of the order given.
    pub fn best(&mut self, data: &Dataset, rows: &[usize], candidates: &[usize]) -> Option<SplitChoice> {
        let n_classes = data.n_classes();
        let labels = data.labels();
        let m = rows.len() as u64;
        if m < 2 {
            return None;
        }
        let mut parent = vec![0u64; n_classes];
        for &r in rows {
            parent[labels[r] as usize] += 1;
        }
        let parent_sq: u64 = parent.iter().map(|c| c * c).sum();
        // Pure node: nothing to gain.
        if parent_sq == m * m {
            return None;
        }

        let mut sorted: Vec<usize> = candidates.to_vec();
        sorted.sort_unstable();
        sorted.dedup();

        let mut best: Option<(Score, usize, f64, usize)> = None;
        for &feature in &sorted {
            self.pairs.clear();
            self.pairs.extend(rows.iter().map(|&r| (data.value(r, feature), labels[r])));
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.pairs[0].0 == self.pairs[self.pairs.len() - 1].0 {
                continue;
            }
            self.left.clear();
            self.left.resize(n_classes, 0);
            self.right.clear();
            self.right.extend_from_slice(&parent);
            let mut sq_left: u64 = 0;
            let mut sq_right: u64 = parent_sq;
            for i in 0..self.pairs.len() - 1 {
                let c = self.pairs[i].1 as usize;
                sq_left += 2 * self.left[c] + 1;
                self.left[c] += 1;
                sq_right -= 2 * self.right[c] - 1;
                self.right[c] -= 1;
                let (v, next) = (self.pairs[i].0, self.pairs[i + 1].0);
                if v == next {
                    continue;
                }
                let n_left = (i + 1) as u64;
                let n_right = m - n_left;
                let score = Score {
                    num: sq_left as u128 * n_right as u128 + sq_right as u128 * n_left as u128,
                    den: n_left as u128 * n_right as u128,
                };
                if best.as_ref().is_none_or(|(b, ..)| score.beats(b)) {
                    best = Some((score, feature, midpoint(v, next), n_left as usize));
                }
            }
        }

        let (score, feature, threshold, n_left) = best?;
        // Positive decrease: num/den > parent_sq/m.
        if score.num * m as u128 <= parent_sq as u128 * score.den {
            return None;
        }
        let decrease = (score.num as f64 / score.den as f64 - parent_sq as f64 / m as f64) / m as f64;
        Some(SplitChoice { feature, threshold, n_left, decrease })
    }
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Convenience wrapper allocating fresh buffers.
pub fn best_split(data: &Dataset, rows: &[usize], candidates: &[usize]) -> Option<SplitChoice> {
    SplitSearch::new().best(data, rows, candidates)
}
