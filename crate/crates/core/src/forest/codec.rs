//! Portable little-endian tree encoding.
//!
//! ```text
//! header   "RFT1" | global_index u64 | n_classes u16 | n_features u16 | node_count u32
//! node     kind u8 (0 = leaf, 1 = internal), then
//!   leaf      class_count_len u16 | class_count_len x u32
//!   internal  feature u16 | threshold f64 | left_subtree_node_count u32
//! ```
//!
//! Nodes follow in preorder; an internal node's right child starts right
//! after its left subtree.

use super::tree::{DecisionTree, TreeNode};

pub const TREE_MAGIC: &[u8; 4] = b"RFT1";
pub const HEADER_LEN: usize = 4 + 8 + 2 + 2 + 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("buffer ends at byte {at}, {needed} more bytes needed")]
    Truncated { at: usize, needed: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("node {node}: {message}")]
    BadNode { node: usize, message: String },
    #[error("{0}")]
    Malformed(String),
    #[error("{0} trailing bytes after the last record")]
    Trailing(usize),
}

pub fn serialize_tree(tree: &DecisionTree) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + tree.nodes.len() * 16);
    write_tree(tree, &mut out);
    out
}

pub(crate) fn write_tree(tree: &DecisionTree, out: &mut Vec<u8>) {
    out.extend_from_slice(TREE_MAGIC);
    out.extend_from_slice(&tree.global_index.to_le_bytes());
    out.extend_from_slice(&(tree.n_classes as u16).to_le_bytes());
    out.extend_from_slice(&(tree.n_features as u16).to_le_bytes());
    out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
    for (i, node) in tree.nodes.iter().enumerate() {
        match node {
            TreeNode::Leaf { class_counts, .. } => {
                out.push(0);
                out.extend_from_slice(&(class_counts.len() as u16).to_le_bytes());
                for c in class_counts {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            TreeNode::Internal { feature, threshold, right, .. } => {
                out.push(1);
                out.extend_from_slice(&feature.to_le_bytes());
                out.extend_from_slice(&threshold.to_le_bytes());
                out.extend_from_slice(&(right - i as u32 - 1).to_le_bytes());
            }
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(DecodeError::Truncated { at: self.buf.len(), needed: n - remaining });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, DecodeError> {
        self.array().map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DecodeError> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DecodeError> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Result<f64, DecodeError> {
        self.array().map(f64::from_le_bytes)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Decodes exactly one tree; the buffer must contain nothing else.
pub fn deserialize_tree(bytes: &[u8]) -> Result<DecisionTree, DecodeError> {
    let mut r = Reader::new(bytes);
    let tree = read_tree(&mut r)?;
    match r.remaining() {
        0 => Ok(tree),
        extra => Err(DecodeError::Trailing(extra)),
    }
}

pub(crate) fn read_tree(r: &mut Reader<'_>) -> Result<DecisionTree, DecodeError> {
    let magic: [u8; 4] = r.array()?;
    if &magic != TREE_MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let global_index = r.u64()?;
    let n_classes = r.u16()? as usize;
    let n_features = r.u16()? as usize;
    let node_count = r.u32()? as usize;
    if node_count == 0 {
        return Err(DecodeError::Malformed("tree has no nodes".into()));
    }
    if n_classes < 1 || n_features < 1 {
        return Err(DecodeError::Malformed("tree has no classes or no features".into()));
    }
    // Every record is at least 3 bytes; reject impossible counts before allocating.
    if node_count > r.remaining() / 3 {
        return Err(DecodeError::Truncated { at: bytes_end(r), needed: node_count * 3 - r.remaining() });
    }

    let mut nodes = Vec::with_capacity(node_count);
    let mut left_sizes = Vec::with_capacity(node_count);
    for i in 0..node_count {
        let bad = |message: String| DecodeError::BadNode { node: i, message };
        match r.u8()? {
            0 => {
                let len = r.u16()? as usize;
                if len != n_classes {
                    return Err(bad(format!("{len} class counts for {n_classes} classes")));
                }
                let mut counts = Vec::with_capacity(len);
                for _ in 0..len {
                    counts.push(r.u32()?);
                }
                if counts.iter().map(|&c| c as u64).sum::<u64>() == 0 {
                    return Err(bad("leaf has no training rows".into()));
                }
                nodes.push(TreeNode::leaf(counts));
                left_sizes.push(0);
            }
            1 => {
                let feature = r.u16()?;
                let threshold = r.f64()?;
                let left_size = r.u32()? as usize;
                if feature as usize >= n_features {
                    return Err(bad(format!("feature {feature} out of range for {n_features} features")));
                }
                if threshold.is_nan() {
                    return Err(bad("threshold is NaN".into()));
                }
                nodes.push(TreeNode::Internal { feature, threshold, left: 0, right: 0 });
                left_sizes.push(left_size);
            }
            kind => return Err(bad(format!("unknown node kind {kind}"))),
        }
    }

    // Children always follow their parent, so subtree sizes resolve in one reverse pass.
    let mut sizes = vec![0usize; node_count];
    for i in (0..node_count).rev() {
        match &mut nodes[i] {
            TreeNode::Leaf { .. } => sizes[i] = 1,
            TreeNode::Internal { left, right, .. } => {
                let bad = |message: &str| DecodeError::BadNode { node: i, message: message.into() };
                let l = i + 1;
                let rt = l.checked_add(left_sizes[i]).ok_or_else(|| bad("left subtree size overflows"))?;
                if left_sizes[i] == 0 || rt >= node_count {
                    return Err(bad("child index out of range"));
                }
                if sizes[l] != left_sizes[i] {
                    return Err(bad("left subtree size does not match its records"));
                }
                sizes[i] = 1 + sizes[l] + sizes[rt];
                *left = l as u32;
                *right = rt as u32;
            }
        }
    }
    if sizes[0] != node_count {
        return Err(DecodeError::Malformed(format!("root subtree spans {} of {node_count} nodes", sizes[0])));
    }
    Ok(DecisionTree { nodes, global_index, n_classes, n_features })
}

fn bytes_end(r: &Reader<'_>) -> usize {
    r.buf.len()
}

/// Encodes a list of trees as `count u32 | (len u32 | tree bytes)*`.
pub fn serialize_trees<'a>(trees: impl IntoIterator<Item = &'a DecisionTree>) -> Vec<u8> {
    let trees: Vec<&DecisionTree> = trees.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(&(trees.len() as u32).to_le_bytes());
    let mut buf = Vec::new();
    for t in trees {
        buf.clear();
        write_tree(t, &mut buf);
        out.extend_from_slice(&(buf.len() as u32).to_le_bytes());
        out.extend_from_slice(&buf);
    }
    out
}

pub fn deserialize_trees(bytes: &[u8]) -> Result<Vec<DecisionTree>, DecodeError> {
    let mut r = Reader::new(bytes);
    let count = r.u32()? as usize;
    if count > r.remaining() / (4 + HEADER_LEN) {
        return Err(DecodeError::Malformed(format!("{count} trees cannot fit in {} bytes", r.remaining())));
    }
    let mut trees = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        trees.push(deserialize_tree(r.take(len)?)?);
    }
    match r.remaining() {
        0 => Ok(trees),
        extra => Err(DecodeError::Trailing(extra)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::forest::{build_tree, ForestParams};

    fn leaf_tree() -> DecisionTree {
        DecisionTree { nodes: vec![TreeNode::leaf(vec![3, 1])], global_index: 7, n_classes: 2, n_features: 3 }
    }

    #[test]
    fn single_leaf_layout() {
        let bytes = serialize_tree(&leaf_tree());
        assert_eq!(bytes.len(), HEADER_LEN + 1 + 2 + 2 * 4);
        assert_eq!(&bytes[..4], b"RFT1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 7);
        assert_eq!(&bytes[HEADER_LEN..], &[0, 2, 0, 3, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(deserialize_tree(&bytes).unwrap(), leaf_tree());
    }

    #[test]
    fn round_trip_and_truncation() {
        let ds = Dataset::new(
            (0..200).map(|i| f64::from((i * 37) % 11)).collect(),
            (0..100).map(|i| (i % 3) as u32).collect(),
            2,
            3,
        )
        .unwrap();
        let tree = build_tree(&ds, &ForestParams::default(), 4, 12).unwrap();
        assert!(tree.nodes().len() > 3);
        let bytes = serialize_tree(&tree);
        assert_eq!(deserialize_tree(&bytes).unwrap(), tree);
        for cut in 0..bytes.len() {
            assert!(deserialize_tree(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(deserialize_tree(&extra), Err(DecodeError::Trailing(1)));
    }

    #[test]
    fn rejects_bad_structure() {
        let mut bytes = serialize_tree(&leaf_tree());
        bytes[0] = b'X';
        assert!(matches!(deserialize_tree(&bytes), Err(DecodeError::BadMagic(_))));

        // Internal root whose left subtree claims more nodes than exist.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RFT1");
        bytes.extend_from_slice(&0u64.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.push(1);
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.extend_from_slice(&0.5f64.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&[0, 2, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        }
        assert!(matches!(deserialize_tree(&bytes), Err(DecodeError::BadNode { node: 0, .. })));
    }

    #[test]
    fn tree_lists() {
        let a = leaf_tree();
        let mut b = leaf_tree();
        b.global_index = 9;
        let bytes = serialize_trees([&a, &b]);
        assert_eq!(deserialize_trees(&bytes).unwrap(), vec![a, b]);
        assert!(deserialize_trees(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(deserialize_trees(&serialize_trees([])).unwrap(), vec![]);
    }
}
