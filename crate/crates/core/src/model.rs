//! Decision tree ensembles: in-memory representation, canonical JSON
//! (de)serialization, structural validation and reference inference.
//!
//! Node ids are array positions and node 0 is always the root. Split values,
//! predictions and features are binary32; an input goes left when
//! `x[feature] <= split` and right otherwise, so NaN inputs always go right.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a node inside its tree.
pub type NodeId = usize;

/// Feature value that marks a leaf in native node records. Feature indices
/// must stay strictly below it.
pub const LEAF_SENTINEL: u16 = 0xFFFF;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("value error: {0}")]
    Value(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Inner {
        feature: usize,
        split: f32,
        left: NodeId,
        right: NodeId,
    },
    Leaf {
        prediction: f32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    /// Training tuples routed to the left child.
    pub left_count: u64,
    /// Training tuples routed to the right child.
    pub right_count: u64,
}

impl Node {
    pub fn inner(feature: usize, split: f32, left: NodeId, right: NodeId) -> Self {
        Node {
            kind: NodeKind::Inner {
                feature,
                split,
                left,
                right,
            },
            left_count: 0,
            right_count: 0,
        }
    }

    pub fn leaf(prediction: f32) -> Self {
        Node {
            kind: NodeKind::Leaf { prediction },
            left_count: 0,
            right_count: 0,
        }
    }

    pub fn with_counts(mut self, left: u64, right: u64) -> Self {
        self.left_count = left;
        self.right_count = right;
        self
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn children(&self) -> Option<(NodeId, NodeId)> {
        match self.kind {
            NodeKind::Inner { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn feature(&self) -> Option<usize> {
        match self.kind {
            NodeKind::Inner { feature, .. } => Some(feature),
            NodeKind::Leaf { .. } => None,
        }
    }

    /// Split value for inner nodes, prediction for leaves.
    pub fn value(&self) -> f32 {
        match self.kind {
            NodeKind::Inner { split, .. } => split,
            NodeKind::Leaf { prediction } => prediction,
        }
    }
}

/// A validated decision tree. The child graph is guaranteed to be a tree
/// rooted at node 0 that covers every node.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    parents: Vec<Option<NodeId>>,
    levels: Vec<usize>,
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

impl Tree {
    pub fn new(nodes: Vec<Node>) -> Result<Self, ModelError> {
        if nodes.is_empty() {
            return Err(ModelError::Structure("tree has no nodes".into()));
        }
        let n = nodes.len();
        let mut parents: Vec<Option<NodeId>> = vec![None; n];
        for (id, node) in nodes.iter().enumerate() {
            if let NodeKind::Inner {
                split, left, right, ..
            } = node.kind
            {
                if !split.is_finite() {
                    return Err(ModelError::Value(format!(
                        "node {id}: split value {split} is not finite"
                    )));
                }
                for child in [left, right] {
                    if child >= n {
                        return Err(ModelError::Structure(format!(
                            "node {id}: child index {child} out of range (tree has {n} nodes)"
                        )));
                    }
                    if child == 0 {
                        return Err(ModelError::Structure(format!(
                            "node {id}: root cannot be a child (cycle)"
                        )));
                    }
                    if let Some(p) = parents[child] {
                        return Err(ModelError::Structure(format!(
                            "node {child} has two parents ({p} and {id})"
                        )));
                    }
                    parents[child] = Some(id);
                }
            } else if !node.value().is_finite() {
                return Err(ModelError::Value(format!(
                    "node {id}: prediction {} is not finite",
                    node.value()
                )));
            }
        }

        // Every node has at most one parent and the root has none, so a
        // breadth-first walk from the root reaches exactly the acyclic part.
        let mut levels = vec![usize::MAX; n];
        let mut queue = VecDeque::from([0usize]);
        levels[0] = 0;
        let mut seen = 1;
        while let Some(id) = queue.pop_front() {
            if let Some((l, r)) = nodes[id].children() {
                for c in [l, r] {
                    levels[c] = levels[id] + 1;
                    seen += 1;
                    queue.push_back(c);
                }
            }
        }
        if seen != n {
            let orphan = levels.iter().position(|&l| l == usize::MAX).unwrap_or(0);
            return Err(ModelError::Structure(format!(
                "node {orphan} is not reachable from the root (orphan or cycle)"
            )));
        }
        Ok(Tree {
            nodes,
            parents,
            levels,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parents[id]
    }

    /// Zero-based layer of a node (the root is layer 0).
    pub fn level(&self, id: NodeId) -> usize {
        self.levels[id]
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0) + 1
    }

    /// Root-to-node path, both ends included.
    pub fn path(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parents[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Node ids in breadth-first order (by layer, then by id).
    pub fn bfs_order(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = (0..self.len()).collect();
        ids.sort_by_key(|&id| (self.levels[id], id));
        ids
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).filter(|&id| self.nodes[id].is_leaf())
    }

    /// Largest feature index read by any inner node.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes.iter().filter_map(Node::feature).max()
    }

    /// Follows the transition rule from the root and returns the leaf reached.
    pub fn leaf_for(&self, features: &[f32]) -> NodeId {
        let mut id = 0;
        while let NodeKind::Inner {
            feature,
            split,
            left,
            right,
        } = self.nodes[id].kind
        {
            id = if features[feature] <= split { left } else { right };
        }
        id
    }

    /// Sequence of visited nodes, root to leaf.
    pub fn visit(&self, features: &[f32]) -> Vec<NodeId> {
        let mut visited = vec![0];
        let mut id = 0;
        while let NodeKind::Inner {
            feature,
            split,
            left,
            right,
        } = self.nodes[id].kind
        {
            id = if features[feature] <= split { left } else { right };
            visited.push(id);
        }
        visited
    }

    /// Reference (logical) inference.
    pub fn infer(&self, features: &[f32]) -> f32 {
        self.nodes[self.leaf_for(features)].value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Average,
    Majority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub trees: Vec<Tree>,
    pub num_features: usize,
    pub aggregation: Aggregation,
}

impl Ensemble {
    pub fn new(
        trees: Vec<Tree>,
        num_features: usize,
        aggregation: Aggregation,
    ) -> Result<Self, ModelError> {
        for (t, tree) in trees.iter().enumerate() {
            if let Some(f) = tree.max_feature() {
                if f >= num_features {
                    return Err(ModelError::Structure(format!(
                        "tree {t}: feature index {f} >= num_features {num_features}"
                    )));
                }
            }
        }
        Ok(Ensemble {
            trees,
            num_features,
            aggregation,
        })
    }

    /// Combines per-tree predictions. Majority ties go to the smaller value.
    pub fn infer(&self, features: &[f32]) -> f32 {
        let preds: Vec<f32> = self.trees.iter().map(|t| t.infer(features)).collect();
        aggregate(&preds, self.aggregation)
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ModelError> {
        let doc: EnsembleDoc =
            serde_json::from_slice(bytes).map_err(|e| ModelError::Schema(e.to_string()))?;
        doc.into_ensemble()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&EnsembleDoc::from(self)).expect("model serializes")
    }
}

pub fn aggregate(preds: &[f32], aggregation: Aggregation) -> f32 {
    if preds.is_empty() {
        return f32::NAN;
    }
    match aggregation {
        Aggregation::Average => {
            (preds.iter().map(|&p| f64::from(p)).sum::<f64>() / preds.len() as f64) as f32
        }
        Aggregation::Majority => {
            let mut sorted = preds.to_vec();
            sorted.sort_by(f32::total_cmp);
            let mut best = sorted[0];
            let mut best_run = 0;
            let mut i = 0;
            while i < sorted.len() {
                let j = sorted[i..]
                    .iter()
                    .position(|v| v.total_cmp(&sorted[i]).is_ne())
                    .map_or(sorted.len(), |off| i + off);
                // strict `>` keeps the smallest value among equally frequent ones
                if j - i > best_run {
                    best_run = j - i;
                    best = sorted[i];
                }
                i = j;
            }
            best
        }
    }
}

/// Parses and validates a canonical model document.
pub fn load_model(bytes: &[u8]) -> Result<Ensemble, ModelError> {
    Ensemble::from_json(bytes)
}

// ---------------------------------------------------------------------------
// Canonical JSON schema.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleDoc {
    num_features: usize,
    aggregation: Aggregation,
    trees: Vec<TreeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum KindDoc {
    Inner,
    Leaf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<i64>,
    kind: KindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_index: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split_value: Option<Binary32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left_child: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right_child: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prediction: Option<Binary32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left_count: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right_count: Option<i64>,
}

/// A number that is read as f64 and narrowed to binary32, and written as the
/// shortest decimal that round-trips the binary32 value.
#[derive(Clone, Copy)]
struct Binary32(f64);

impl Serialize for Binary32 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f32(self.0 as f32)
    }
}

impl<'de> Deserialize<'de> for Binary32 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Binary32)
    }
}

fn narrow(v: Binary32, what: &str, id: usize) -> Result<f32, ModelError> {
    let f = v.0 as f32;
    if f.is_finite() {
        Ok(f)
    } else {
        Err(ModelError::Value(format!(
            "node {id}: {what} {} is not a finite binary32 value",
            v.0
        )))
    }
}

fn count(v: Option<i64>, what: &str, id: usize) -> Result<u64, ModelError> {
    match v {
        None => Ok(0),
        Some(c) if c < 0 => Err(ModelError::Value(format!("node {id}: negative {what} {c}"))),
        Some(c) => Ok(c as u64),
    }
}

fn index(v: i64, what: &str, id: usize) -> Result<usize, ModelError> {
    usize::try_from(v)
        .map_err(|_| ModelError::Structure(format!("node {id}: negative {what} {v}")))
}

impl NodeDoc {
    fn into_node(self, pos: usize) -> Result<Node, ModelError> {
        if let Some(id) = self.id {
            if id != pos as i64 {
                return Err(ModelError::Structure(format!(
                    "node at position {pos} has id {id}; ids must equal array positions"
                )));
            }
        }
        let left_count = count(self.left_count, "left_count", pos)?;
        let right_count = count(self.right_count, "right_count", pos)?;
        let missing = |f: &str| ModelError::Schema(format!("node {pos}: inner node missing {f}"));
        let kind = match self.kind {
            KindDoc::Inner => {
                if self.prediction.is_some() {
                    return Err(ModelError::Schema(format!(
                        "node {pos}: inner node has a prediction"
                    )));
                }
                let feature = self.feature_index.ok_or_else(|| missing("feature_index"))?;
                let split = self.split_value.ok_or_else(|| missing("split_value"))?;
                let left = self.left_child.ok_or_else(|| missing("left_child"))?;
                let right = self.right_child.ok_or_else(|| missing("right_child"))?;
                NodeKind::Inner {
                    feature: usize::try_from(feature).map_err(|_| {
                        ModelError::Value(format!("node {pos}: negative feature index {feature}"))
                    })?,
                    split: narrow(split, "split value", pos)?,
                    left: index(left, "left child", pos)?,
                    right: index(right, "right child", pos)?,
                }
            }
            KindDoc::Leaf => {
                if self.feature_index.is_some()
                    || self.split_value.is_some()
                    || self.left_child.is_some()
                    || self.right_child.is_some()
                {
                    return Err(ModelError::Schema(format!(
                        "node {pos}: leaf carries inner-node fields"
                    )));
                }
                let p = self
                    .prediction
                    .ok_or_else(|| ModelError::Schema(format!("node {pos}: leaf missing prediction")))?;
                NodeKind::Leaf {
                    prediction: narrow(p, "prediction", pos)?,
                }
            }
        };
        Ok(Node {
            kind,
            left_count,
            right_count,
        })
    }

    fn from_node(id: usize, node: &Node) -> Self {
        let opt = |c: u64| (c != 0 || !node.is_leaf()).then_some(c as i64);
        let mut doc = NodeDoc {
            id: Some(id as i64),
            kind: KindDoc::Leaf,
            feature_index: None,
            split_value: None,
            left_child: None,
            right_child: None,
            prediction: None,
            left_count: opt(node.left_count),
            right_count: opt(node.right_count),
        };
        match node.kind {
            NodeKind::Inner {
                feature,
                split,
                left,
                right,
            } => {
                doc.kind = KindDoc::Inner;
                doc.feature_index = Some(feature as i64);
                doc.split_value = Some(Binary32(f64::from(split)));
                doc.left_child = Some(left as i64);
                doc.right_child = Some(right as i64);
            }
            NodeKind::Leaf { prediction } => {
                doc.prediction = Some(Binary32(f64::from(prediction)));
            }
        }
        doc
    }
}

impl EnsembleDoc {
    fn into_ensemble(self) -> Result<Ensemble, ModelError> {
        let trees = self
            .trees
            .into_iter()
            .enumerate()
            .map(|(t, doc)| {
                let nodes = doc
                    .nodes
                    .into_iter()
                    .enumerate()
                    .map(|(pos, n)| n.into_node(pos))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| prefix_tree(t, e))?;
                Tree::new(nodes).map_err(|e| prefix_tree(t, e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ensemble::new(trees, self.num_features, self.aggregation)
    }
}

fn prefix_tree(t: usize, e: ModelError) -> ModelError {
    match e {
        ModelError::Schema(m) => ModelError::Schema(format!("tree {t}: {m}")),
        ModelError::Structure(m) => ModelError::Structure(format!("tree {t}: {m}")),
        ModelError::Value(m) => ModelError::Value(format!("tree {t}: {m}")),
    }
}

impl From<&Ensemble> for EnsembleDoc {
    fn from(e: &Ensemble) -> Self {
        EnsembleDoc {
            num_features: e.num_features,
            aggregation: e.aggregation,
            trees: e
                .trees
                .iter()
                .map(|t| TreeDoc {
                    nodes: t
                        .nodes()
                        .iter()
                        .enumerate()
                        .map(|(id, n)| NodeDoc::from_node(id, n))
                        .collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Root reads feature 0 at 0.5 with 60/40 routing; leaves predict 0 and 1.
    pub fn t1() -> Tree {
        Tree::new(vec![
            Node::inner(0, 0.5, 1, 2).with_counts(60, 40),
            Node::leaf(0.0),
            Node::leaf(1.0),
        ])
        .unwrap()
    }

    /// Root splits 50/50 on feature 0; left child reads feature 0 again,
    /// right child reads feature 1.
    pub fn t2() -> Tree {
        Tree::new(vec![
            Node::inner(0, 0.0, 1, 2).with_counts(50, 50),
            Node::inner(0, -1.0, 3, 4).with_counts(25, 25),
            Node::inner(1, 1.0, 5, 6).with_counts(25, 25),
            Node::leaf(0.0),
            Node::leaf(1.0),
            Node::leaf(2.0),
            Node::leaf(3.0),
        ])
        .unwrap()
    }

    /// Chain of `inner` nodes all reading feature 0, each 50/50.
    pub fn chain(inner: usize) -> Tree {
        let mut nodes = Vec::new();
        for i in 0..inner {
            // inner node 2i, leaf 2i+1 on the right, next inner (or last leaf) 2i+2
            nodes.push(Node::inner(0, i as f32, 2 * i + 2, 2 * i + 1).with_counts(50, 50));
            nodes.push(Node::leaf(i as f32 + 100.0));
        }
        nodes.push(Node::leaf(-1.0));
        Tree::new(nodes).unwrap()
    }

    /// Complete tree with `depth` layers, every split 50/50.
    pub fn complete(depth: usize) -> Tree {
        let n = (1usize << depth) - 1;
        let inner = (1usize << (depth - 1)) - 1;
        let nodes = (0..n)
            .map(|i| {
                if i < inner {
                    Node::inner(i % 3, i as f32 * 0.25, 2 * i + 1, 2 * i + 2).with_counts(10, 10)
                } else {
                    Node::leaf(i as f32)
                }
            })
            .collect();
        Tree::new(nodes).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn doc(trees: &str) -> String {
        format!(r#"{{"num_features": 2, "aggregation": "average", "trees": [{trees}]}}"#)
    }

    #[test]
    fn single_leaf_document() {
        let e = load_model(doc(r#"{"nodes":[{"kind":"leaf","prediction":1.0}]}"#).as_bytes())
            .unwrap();
        assert_eq!(e.trees.len(), 1);
        assert_eq!(e.trees[0].depth(), 1);
        assert_eq!(e.trees[0].infer(&[7.0, 8.0]), 1.0);
    }

    #[test]
    fn t1_document_loads() {
        let text = doc(r#"{"nodes":[
            {"id":0,"kind":"inner","feature_index":0,"split_value":0.5,"left_child":1,"right_child":2,"left_count":60,"right_count":40},
            {"id":1,"kind":"leaf","prediction":0.0},
            {"id":2,"kind":"leaf","prediction":1.0}]}"#);
        let e = load_model(text.as_bytes()).unwrap();
        assert_eq!(e.trees[0], t1());
    }

    #[test]
    fn self_loop_is_structure_error() {
        let text = doc(r#"{"nodes":[
            {"kind":"inner","feature_index":0,"split_value":0.5,"left_child":0,"right_child":1},
            {"kind":"leaf","prediction":0.0}]}"#);
        assert!(matches!(load_model(text.as_bytes()), Err(ModelError::Structure(_))));
    }

    #[test]
    fn structural_errors() {
        let cases = [
            // out of range child
            r#"{"nodes":[{"kind":"inner","feature_index":0,"split_value":0.5,"left_child":1,"right_child":5},{"kind":"leaf","prediction":0.0}]}"#,
            // orphan
            r#"{"nodes":[{"kind":"leaf","prediction":0.0},{"kind":"leaf","prediction":0.0}]}"#,
            // shared child
            r#"{"nodes":[{"kind":"inner","feature_index":0,"split_value":0.5,"left_child":1,"right_child":1},{"kind":"leaf","prediction":0.0}]}"#,
            // cycle between 1 and 2, unreachable from root
            r#"{"nodes":[{"kind":"leaf","prediction":0.0},{"kind":"inner","feature_index":0,"split_value":0.5,"left_child":2,"right_child":3},{"kind":"inner","feature_index":0,"split_value":0.5,"left_child":1,"right_child":4},{"kind":"leaf","prediction":0.0},{"kind":"leaf","prediction":0.0}]}"#,
            // feature out of range
            r#"{"nodes":[{"kind":"inner","feature_index":2,"split_value":0.5,"left_child":1,"right_child":2},{"kind":"leaf","prediction":0.0},{"kind":"leaf","prediction":0.0}]}"#,
            // id mismatch
            r#"{"nodes":[{"id":3,"kind":"leaf","prediction":0.0}]}"#,
        ];
        for c in cases {
            let r = load_model(doc(c).as_bytes());
            assert!(matches!(r, Err(ModelError::Structure(_))), "{c}: {r:?}");
        }
    }

    #[test]
    fn schema_errors() {
        let cases = [
            r#"{"nodes":[{"kind":"leaf"}]}"#,
            r#"{"nodes":[{"kind":"leaf","prediction":1.0,"colour":"red"}]}"#,
            r#"{"nodes":[{"kind":"inner","feature_index":0,"left_child":1,"right_child":2},{"kind":"leaf","prediction":0.0},{"kind":"leaf","prediction":0.0}]}"#,
            r#"{"nodes":[{"kind":"leaf","prediction":1.0,"split_value":2.0}]}"#,
            r#"{"nodes":[{"kind":"branch","prediction":1.0}]}"#,
        ];
        for c in cases {
            let r = load_model(doc(c).as_bytes());
            assert!(matches!(r, Err(ModelError::Schema(_))), "{c}: {r:?}");
        }
        let r = load_model(br#"{"aggregation":"average","trees":[]}"#);
        assert!(matches!(r, Err(ModelError::Schema(_))));
    }

    #[test]
    fn value_errors() {
        let cases = [
            r#"{"nodes":[{"kind":"inner","feature_index":0,"split_value":0.5,"left_child":1,"right_child":2,"left_count":-1},{"kind":"leaf","prediction":0.0},{"kind":"leaf","prediction":0.0}]}"#,
            r#"{"nodes":[{"kind":"inner","feature_index":0,"split_value":1e300,"left_child":1,"right_child":2},{"kind":"leaf","prediction":0.0},{"kind":"leaf","prediction":0.0}]}"#,
        ];
        for c in cases {
            let r = load_model(doc(c).as_bytes());
            assert!(matches!(r, Err(ModelError::Value(_))), "{c}: {r:?}");
        }
    }

    #[test]
    fn transition_rule() {
        let t = t1();
        assert_eq!(t.infer(&[0.5]), 0.0);
        assert_eq!(t.infer(&[0.6]), 1.0);
        assert_eq!(t.infer(&[f32::NAN]), 1.0);
        assert_eq!(t.infer(&[f32::NEG_INFINITY]), 0.0);
    }

    #[test]
    fn aggregation_rules() {
        let a = Tree::new(vec![Node::leaf(0.0)]).unwrap();
        let b = Tree::new(vec![Node::leaf(1.0)]).unwrap();
        let avg = Ensemble::new(vec![a.clone(), b.clone()], 1, Aggregation::Average).unwrap();
        assert_eq!(avg.infer(&[0.0]), 0.5);
        let single = Ensemble::new(vec![b.clone()], 1, Aggregation::Majority).unwrap();
        assert_eq!(single.infer(&[0.0]), 1.0);
        let maj = Ensemble::new(vec![b.clone(), b.clone(), a.clone()], 1, Aggregation::Majority)
            .unwrap();
        assert_eq!(maj.infer(&[0.0]), 1.0);
        assert_eq!(aggregate(&[2.0, 1.0, 2.0, 1.0], Aggregation::Majority), 1.0);
    }

    #[test]
    fn paths_and_depth() {
        let t = t1();
        assert_eq!(t.path(0), vec![0]);
        assert_eq!(t.path(2), vec![0, 2]);
        assert_eq!(t.depth(), 2);
        assert_eq!(Tree::new(vec![Node::leaf(3.0)]).unwrap().depth(), 1);
        assert_eq!(chain(4).depth(), 5);
        assert_eq!(complete(3).bfs_order(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn json_round_trip_fixture() {
        let e = Ensemble::new(vec![t1(), t2()], 2, Aggregation::Majority).unwrap();
        let back = load_model(e.to_json().as_bytes()).unwrap();
        assert_eq!(back, e);
        assert!(e.to_json().contains("\"split_value\": 0.5"));
    }
}
