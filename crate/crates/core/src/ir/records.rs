//! Native node records: 16 bytes per node, little endian.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | split (inner) or prediction (leaf), f32 |
//! | 4      | 2    | feature index, `0xFFFF` for leaves      |
//! | 6      | 2    | left child                              |
//! | 8      | 2    | right child                             |
//! | 10     | 6    | zero padding                            |

use thiserror::Error;

use crate::model::{Node, NodeKind, Tree, LEAF_SENTINEL};

pub const RECORD_SIZE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("record table error: {0}")]
pub struct RecordError(pub String);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub value: f32,
    pub feature: u16,
    pub left: u16,
    pub right: u16,
}

impl Record {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF_SENTINEL
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordTable {
    bytes: Vec<u8>,
}

impl RecordTable {
    pub fn from_tree(tree: &Tree) -> Result<Self, RecordError> {
        if tree.len() > usize::from(LEAF_SENTINEL) {
            return Err(RecordError(format!(
                "{} nodes do not fit 16-bit child indices",
                tree.len()
            )));
        }
        let mut bytes = Vec::with_capacity(tree.len() * RECORD_SIZE);
        for (id, node) in tree.nodes().iter().enumerate() {
            let (value, feature, left, right) = match node.kind {
                NodeKind::Inner {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    if feature >= usize::from(LEAF_SENTINEL) {
                        return Err(RecordError(format!(
                            "node {id}: feature index {feature} does not fit 16 bits"
                        )));
                    }
                    (split, feature as u16, left as u16, right as u16)
                }
                NodeKind::Leaf { prediction } => (prediction, LEAF_SENTINEL, 0, 0),
            };
            bytes.extend_from_slice(&value.to_le_bytes());
            bytes.extend_from_slice(&feature.to_le_bytes());
            bytes.extend_from_slice(&left.to_le_bytes());
            bytes.extend_from_slice(&right.to_le_bytes());
            bytes.extend_from_slice(&[0u8; 6]);
        }
        Ok(RecordTable { bytes })
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, RecordError> {
        if !bytes.len().is_multiple_of(RECORD_SIZE) {
            return Err(RecordError(format!(
                "{} bytes is not a whole number of records",
                bytes.len()
            )));
        }
        Ok(RecordTable { bytes })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / RECORD_SIZE
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<Record> {
        let r = self.bytes.get(index * RECORD_SIZE..(index + 1) * RECORD_SIZE)?;
        let u16_at = |o: usize| u16::from_le_bytes([r[o], r[o + 1]]);
        Some(Record {
            value: f32::from_le_bytes([r[0], r[1], r[2], r[3]]),
            feature: u16_at(4),
            left: u16_at(6),
            right: u16_at(8),
        })
    }

    /// Decodes the table back into tree nodes (branch counts are not stored).
    pub fn to_nodes(&self) -> Vec<Node> {
        (0..self.len())
            .map(|i| {
                let r = self.get(i).expect("in range");
                if r.is_leaf() {
                    Node::leaf(r.value)
                } else {
                    Node::inner(
                        usize::from(r.feature),
                        r.value,
                        usize::from(r.left),
                        usize::from(r.right),
                    )
                }
            })
            .collect()
    }
}
