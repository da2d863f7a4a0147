use crate::data::{argmax_lowest, Dataset};
use crate::rng::{make_stream, RngStream, StreamKey};

use super::split::SplitSearch;
use super::{ForestError, ForestParams};

/// One node of a tree stored in preorder.
///
/// An internal node's left child is always the next node; `right` points past
/// the whole left subtree.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal { feature: u16, threshold: f64, left: u32, right: u32 },
    Leaf { class_counts: Vec<u32>, label: u32 },
}

impl TreeNode {
    pub fn leaf(class_counts: Vec<u32>) -> Self {
        let label = argmax_lowest(&class_counts) as u32;
        TreeNode::Leaf { class_counts, label }
    }
}

/// A CART classification tree.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) global_index: u64,
    pub(crate) n_classes: usize,
    pub(crate) n_features: usize,
}

impl DecisionTree {
    pub fn global_index(&self) -> u64 {
        self.global_index
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Nodes in preorder; the root is element 0.
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            max = max.max(d);
            if let TreeNode::Internal { left, right, .. } = self.nodes[i] {
                stack.push((left as usize, d + 1));
                stack.push((right as usize, d + 1));
            }
        }
        max
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Internal { feature, threshold, left, right } => {
                    i = if row[*feature as usize] <= *threshold { *left } else { *right } as usize;
                }
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    /// Majority class of the leaf reached by `row` (lowest class on ties).
    pub fn predict_row(&self, row: &[f64]) -> u32 {
        match &self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { label, .. } => *label,
            TreeNode::Internal { .. } => unreachable!(),
        }
    }
}

/// The bootstrap bag of tree `global_index`: the first draws of its stream.
pub fn bootstrap_indices(stream: &mut RngStream, n_train: usize, size: usize) -> Vec<usize> {
    stream.sample_with_replacement(n_train, size)
}

struct Task {
    start: usize,
    end: usize,
    depth: usize,
    right_of: Option<usize>,
}

/// Grows one tree on a bootstrap sample of `train`.
///
/// All randomness comes from the stream keyed `(tree, global_index)`: first
/// the bag, then one `mtry` feature draw per node that attempts a split, in
/// preorder.
pub fn build_tree(
    train: &Dataset,
    params: &ForestParams,
    seed: u64,
    global_index: u64,
) -> Result<DecisionTree, ForestError> {
    let n = train.n_rows();
    if n == 0 {
        return Err(ForestError::EmptyTraining);
    }
    let p = train.n_features();
    let mtry = params.resolved_mtry(p)?;
    let bag_size = params.bootstrap_size.unwrap_or(n);
    if bag_size == 0 {
        return Err(ForestError::InvalidParams("bootstrap size must be at least 1".into()));
    }
    let n_classes = train.n_classes();
    let labels = train.labels();

    let mut stream = make_stream(seed, StreamKey::tree(global_index));
    let mut rows = bootstrap_indices(&mut stream, n, bag_size);
    let mut search = SplitSearch::new();
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut stack = vec![Task { start: 0, end: rows.len(), depth: 0, right_of: None }];

    while let Some(task) = stack.pop() {
        let idx = nodes.len();
        if let Some(parent) = task.right_of {
            if let TreeNode::Internal { right, .. } = &mut nodes[parent] {
                *right = idx as u32;
            }
        }
        let node_rows = &mut rows[task.start..task.end];
        let mut counts = vec![0u32; n_classes];
        for &r in node_rows.iter() {
            counts[labels[r] as usize] += 1;
        }
        let size = node_rows.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let capped = params.max_depth.is_some_and(|d| task.depth >= d);
        if pure || size < 2 * params.min_node_size || capped {
            nodes.push(TreeNode::leaf(counts));
            continue;
        }
        let candidates = stream.sample_without_replacement(p, mtry).expect("mtry <= p");
        let Some(split) = search.best(train, node_rows, &candidates) else {
            nodes.push(TreeNode::leaf(counts));
            continue;
        };

        let n_left = partition_rows(node_rows, |r| train.value(r, split.feature) <= split.threshold);
        debug_assert_eq!(n_left, split.n_left);
        nodes.push(TreeNode::Internal {
            feature: split.feature as u16,
            threshold: split.threshold,
            left: idx as u32 + 1,
            right: 0,
        });
        let mid = task.start + n_left;
        stack.push(Task { start: mid, end: task.end, depth: task.depth + 1, right_of: Some(idx) });
        stack.push(Task { start: task.start, end: mid, depth: task.depth + 1, right_of: None });
    }

    Ok(DecisionTree { nodes, global_index, n_classes, n_features: p })
}

/// Moves rows satisfying `goes_left` to the front, returning how many there are.
fn partition_rows(rows: &mut [usize], goes_left: impl Fn(usize) -> bool) -> usize {
    let mut n_left = 0;
    for i in 0..rows.len() {
        if goes_left(rows[i]) {
            rows.swap(i, n_left);
            n_left += 1;
        }
    }
    n_left
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_gives_single_leaf() {
        let ds = Dataset::new(vec![1.0, 2.0], vec![3], 2, 5).unwrap();
        let t = build_tree(&ds, &ForestParams::default(), 1, 0).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict_row(&[100.0, -4.0]), 3);
    }

    #[test]
    fn toy_tree_separates_classes() {
        let ds = Dataset::new(vec![1.0, 2.0, 8.0, 9.0], vec![0, 0, 1, 1], 1, 2).unwrap();
        // Find a seed whose bag holds both classes so the root must split.
        let params = ForestParams { mtry: Some(1), ..ForestParams::default() };
        let t = (0..).map(|seed| build_tree(&ds, &params, seed, 0).unwrap()).find(|t| t.nodes().len() > 1).unwrap();
        match t.nodes()[0] {
            TreeNode::Internal { feature: 0, threshold, .. } => assert!(threshold > 2.0 && threshold < 8.0),
            ref other => panic!("root is {other:?}"),
        }
        assert_eq!(t.nodes().len(), 3);
        for i in 0..4 {
            assert_eq!(t.predict_row(ds.row(i)), ds.labels()[i]);
        }
    }

    #[test]
    fn depth_cap_and_node_size() {
        let ds =
            Dataset::new((0..40).map(f64::from).collect(), (0..40).map(|i| (i % 2) as u32).collect(), 1, 2).unwrap();
        let capped = ForestParams { max_depth: Some(2), mtry: Some(1), ..ForestParams::default() };
        assert!(build_tree(&ds, &capped, 3, 0).unwrap().depth() <= 2);
        let big = ForestParams { min_node_size: 100, mtry: Some(1), ..ForestParams::default() };
        assert_eq!(build_tree(&ds, &big, 3, 0).unwrap().nodes().len(), 1);
    }

    #[test]
    fn bag_size_matches_leaf_totals() {
        let ds =
            Dataset::new((0..30).map(|i| f64::from(i % 7)).collect(), (0..30).map(|i| (i % 3) as u32).collect(), 1, 3)
                .unwrap();
        let params = ForestParams { bootstrap_size: Some(17), mtry: Some(1), ..ForestParams::default() };
        let t = build_tree(&ds, &params, 8, 4).unwrap();
        let total: u32 = t
            .nodes()
            .iter()
            .map(|n| match n {
                TreeNode::Leaf { class_counts, .. } => class_counts.iter().sum(),
                _ => 0,
            })
            .sum();
        assert_eq!(total, 17);
    }
}
