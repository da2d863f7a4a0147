//! Bagged CART forests: tree building, combining blocks, voting.

mod codec;
mod split;
mod tree;

use std::collections::HashSet;

pub use codec::{
    deserialize_tree, deserialize_trees, serialize_tree, serialize_trees, DecodeError, HEADER_LEN, TREE_MAGIC,
};
pub use split::{best_split, gini, SplitChoice, SplitSearch};
pub use tree::{bootstrap_indices, build_tree, DecisionTree, TreeNode};

use crate::data::{argmax_lowest, Dataset};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
    #[error("tree index {0} appears more than once")]
    DuplicateIndex(u64),
    #[error("forest blocks disagree: {0}")]
    ShapeMismatch(String),
    #[error("nothing to combine")]
    NoBlocks,
    #[error("forest has no trees")]
    EmptyForest,
    #[error("rows have {found} columns, forest expects {expected}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("{predicted} predictions for {truth} labels")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("cannot score an empty prediction list")]
    NothingToScore,
    #[error("tree decode failed: {0}")]
    Decode(#[from] DecodeError),
}

/// Training hyperparameters.
///
/// `None` for `mtry` means `floor(sqrt(p))`; `None` for `bootstrap_size`
/// means the number of training rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub bootstrap_size: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 500, mtry: None, min_node_size: 1, max_depth: None, bootstrap_size: None }
    }
}

impl ForestParams {
    pub fn with_trees(n_trees: usize) -> Self {
        ForestParams { n_trees, ..Self::default() }
    }

    pub fn resolved_mtry(&self, n_features: usize) -> Result<usize, ForestError> {
        let mtry = self.mtry.unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1));
        if mtry == 0 || mtry > n_features {
            return Err(ForestError::InvalidParams(format!("mtry {mtry} not in 1..={n_features}")));
        }
        Ok(mtry)
    }

    pub fn validate(&self, n_features: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidParams("need at least one tree".into()));
        }
        if self.min_node_size == 0 {
            return Err(ForestError::InvalidParams("min node size must be at least 1".into()));
        }
        if self.bootstrap_size == Some(0) {
            return Err(ForestError::InvalidParams("bootstrap size must be at least 1".into()));
        }
        self.resolved_mtry(n_features).map(drop)
    }
}

/// Trees ordered by global index, all of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
    n_features: usize,
    params: ForestParams,
}

impl Forest {
    pub fn empty(n_classes: usize, n_features: usize, params: ForestParams) -> Self {
        Forest { trees: Vec::new(), n_classes, n_features, params }
    }

    /// Assembles a forest, sorting trees by global index.
    pub fn from_trees(
        mut trees: Vec<DecisionTree>,
        n_classes: usize,
        n_features: usize,
        params: ForestParams,
    ) -> Result<Self, ForestError> {
        trees.sort_by_key(|t| t.global_index());
        if let Some(w) = trees.windows(2).find(|w| w[0].global_index() == w[1].global_index()) {
            return Err(ForestError::DuplicateIndex(w[0].global_index()));
        }
        if let Some(t) = trees.iter().find(|t| t.n_classes() != n_classes || t.n_features() != n_features) {
            return Err(ForestError::ShapeMismatch(format!(
                "tree {} has {} classes and {} features, forest has {n_classes} and {n_features}",
                t.global_index(),
                t.n_classes(),
                t.n_features()
            )));
        }
        Ok(Forest { trees, n_classes, n_features, params })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn global_indices(&self) -> Vec<u64> {
        self.trees.iter().map(|t| t.global_index()).collect()
    }

    /// Per-class vote tally for one row.
    pub fn votes(&self, row: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.n_classes];
        for t in &self.trees {
            votes[t.predict_row(row) as usize] += 1;
        }
        votes
    }
}

/// Builds one tree per listed global index. Empty lists give an empty forest.
pub fn build_forest_block(
    train: &Dataset,
    params: &ForestParams,
    tree_indices: &[u64],
    seed: u64,
) -> Result<Forest, ForestError> {
    let mut seen = HashSet::with_capacity(tree_indices.len());
    if let Some(&dup) = tree_indices.iter().find(|&&i| !seen.insert(i)) {
        return Err(ForestError::DuplicateIndex(dup));
    }
    if train.n_rows() == 0 {
        return Err(ForestError::EmptyTraining);
    }
    params.validate(train.n_features())?;
    let trees = tree_indices.iter().map(|&i| build_tree(train, params, seed, i)).collect::<Result<Vec<_>, _>>()?;
    Forest::from_trees(trees, train.n_classes(), train.n_features(), params.clone())
}

/// Merges forest blocks into one forest sorted by global index.
pub fn combine(blocks: impl IntoIterator<Item = Forest>) -> Result<Forest, ForestError> {
    let mut blocks = blocks.into_iter();
    let first = blocks.next().ok_or(ForestError::NoBlocks)?;
    let (n_classes, n_features, params) = (first.n_classes, first.n_features, first.params.clone());
    let mut trees = first.trees;
    for b in blocks {
        if b.n_classes != n_classes || b.n_features != n_features || b.params != params {
            return Err(ForestError::ShapeMismatch(format!(
                "block with {} classes, {} features and {:?} vs {n_classes}, {n_features} and {params:?}",
                b.n_classes, b.n_features, b.params
            )));
        }
        trees.extend(b.trees);
    }
    Forest::from_trees(trees, n_classes, n_features, params)
}

/// Borrowed row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct RowMatrix<'a> {
    values: &'a [f64],
    n_cols: usize,
}

impl<'a> RowMatrix<'a> {
    pub fn new(values: &'a [f64], n_cols: usize) -> Result<Self, ForestError> {
        if n_cols == 0 || !values.len().is_multiple_of(n_cols) {
            return Err(ForestError::ColumnMismatch { expected: n_cols, found: values.len() });
        }
        Ok(RowMatrix { values, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Rows `range` as a sub-matrix.
    pub fn slice(&self, range: std::ops::Range<usize>) -> RowMatrix<'a> {
        RowMatrix { values: &self.values[range.start * self.n_cols..range.end * self.n_cols], n_cols: self.n_cols }
    }
}

impl Dataset {
    pub fn matrix(&self) -> RowMatrix<'_> {
        RowMatrix { values: self.features(), n_cols: self.n_features() }
    }
}

/// Majority vote of the forest for each row (lowest class on ties).
pub fn predict_forest(forest: &Forest, rows: RowMatrix<'_>) -> Result<Vec<u32>, ForestError> {
    if forest.is_empty() {
        return Err(ForestError::EmptyForest);
    }
    if rows.n_cols() != forest.n_features() {
        return Err(ForestError::ColumnMismatch { expected: forest.n_features(), found: rows.n_cols() });
    }
    let mut votes = vec![0u32; forest.n_classes()];
    Ok((0..rows.n_rows())
        .map(|i| {
            votes.iter_mut().for_each(|v| *v = 0);
            let row = rows.row(i);
            for t in forest.trees() {
                votes[t.predict_row(row) as usize] += 1;
            }
            argmax_lowest(&votes) as u32
        })
        .collect())
}

/// Number of positions where `predicted` equals `truth`.
pub fn count_correct(predicted: &[u32], truth: &[u32]) -> Result<usize, ForestError> {
    if predicted.len() != truth.len() {
        return Err(ForestError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
    }
    Ok(predicted.iter().zip(truth).filter(|(p, t)| p == t).count())
}

/// Proportion of correct predictions.
pub fn accuracy(predicted: &[u32], truth: &[u32]) -> Result<f64, ForestError> {
    let correct = count_correct(predicted, truth)?;
    if truth.is_empty() {
        return Err(ForestError::NothingToScore);
    }
    Ok(correct as f64 / truth.len() as f64)
}
