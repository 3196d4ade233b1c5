//! 64-bit register payloads for register-resident nodes.
//!
//! ```text
//!  63            32 31      16 15       0
//! +----------------+----------+----------+
//! | split (binary32)|  slot_a  |  slot_b  |
//! +----------------+----------+----------+
//! ```
//!
//! The slots carry whatever the code around the node cannot know statically:
//! both children native gives `(left, right)`, both children if-else gives
//! `(feature, 0)`, mixed children give `(feature, native child)`. Leaves hold
//! their prediction in the split field and the leaf sentinel in `slot_a`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Node, NodeKind, LEAF_SENTINEL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("pack error: {0}")]
pub struct PackError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackMode {
    /// Only the split value; both slots are zero.
    SplitOnly,
    FullNode,
}

impl std::str::FromStr for PackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "split-only" | "split_only" => Ok(PackMode::SplitOnly),
            "full-node" | "full_node" => Ok(PackMode::FullNode),
            _ => Err(format!("unknown pack mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realization {
    IfElse,
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotSemantics {
    Empty,
    Children,
    FeatureOnly,
    FeatureAndLeft,
    FeatureAndRight,
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedNode {
    pub bits: u64,
    pub semantics: SlotSemantics,
}

impl PackedNode {
    pub fn split_bits(self) -> u32 {
        (self.bits >> 32) as u32
    }

    pub fn split(self) -> f32 {
        f32::from_bits(self.split_bits())
    }

    pub fn slot_a(self) -> u16 {
        (self.bits >> 16) as u16
    }

    pub fn slot_b(self) -> u16 {
        self.bits as u16
    }
}

pub fn compose(split: f32, slot_a: u16, slot_b: u16) -> u64 {
    (u64::from(split.to_bits()) << 32) | (u64::from(slot_a) << 16) | u64::from(slot_b)
}

fn index16(v: usize, what: &str) -> Result<u16, PackError> {
    // 0xFFFF is reserved as the leaf sentinel
    if v >= usize::from(LEAF_SENTINEL) {
        Err(PackError(format!("{what} {v} does not fit a 16-bit slot")))
    } else {
        Ok(v as u16)
    }
}

/// Packs a node given how each of its children is realized.
pub fn pack_node(
    node: &Node,
    children: (Realization, Realization),
    mode: PackMode,
) -> Result<PackedNode, PackError> {
    match node.kind {
        NodeKind::Leaf { prediction } => Ok(match mode {
            PackMode::SplitOnly => PackedNode {
                bits: compose(prediction, 0, 0),
                semantics: SlotSemantics::Empty,
            },
            PackMode::FullNode => PackedNode {
                bits: compose(prediction, LEAF_SENTINEL, 0),
                semantics: SlotSemantics::Leaf,
            },
        }),
        NodeKind::Inner {
            feature,
            split,
            left,
            right,
        } => {
            let feature = index16(feature, "feature index")?;
            let left = index16(left, "left child")?;
            let right = index16(right, "right child")?;
            if mode == PackMode::SplitOnly {
                return Ok(PackedNode {
                    bits: compose(split, 0, 0),
                    semantics: SlotSemantics::Empty,
                });
            }
            use Realization::*;
            let (a, b, semantics) = match children {
                (Native, Native) => (left, right, SlotSemantics::Children),
                (IfElse, IfElse) => (feature, 0, SlotSemantics::FeatureOnly),
                (Native, IfElse) => (feature, left, SlotSemantics::FeatureAndLeft),
                (IfElse, Native) => (feature, right, SlotSemantics::FeatureAndRight),
            };
            Ok(PackedNode {
                bits: compose(split, a, b),
                semantics,
            })
        }
    }
}
