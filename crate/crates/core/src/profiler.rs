//! Branch probabilities, absolute access probabilities and feature
//! suitability scores.
//!
//! `prob(n)` is the probability of reaching `n` from its parent, taken from
//! the training routing counts (50/50 when a node saw no training tuples).
//! `absprob(n)` is the product of `prob` along the root path of `n`. The
//! suitability of feature `i` is `S_i = sum_j p[i,j] * j`, where `p[i,j]` is
//! the probability that one root-to-leaf traversal reads feature `i` exactly
//! `j` times.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::{Ensemble, NodeId, Tree};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbAnnotation {
    pub prob: Vec<f64>,
    pub absprob: Vec<f64>,
}

/// Left/right branch probabilities of an inner node.
pub fn branch_probs(left_count: u64, right_count: u64) -> (f64, f64) {
    let total = left_count + right_count;
    if total == 0 {
        (0.5, 0.5)
    } else {
        (
            left_count as f64 / total as f64,
            right_count as f64 / total as f64,
        )
    }
}

pub fn annotate(tree: &Tree) -> ProbAnnotation {
    let n = tree.len();
    let mut prob = vec![0.0; n];
    let mut absprob = vec![0.0; n];
    prob[0] = 1.0;
    absprob[0] = 1.0;
    // parents are always visited before their children in BFS order
    for id in tree.bfs_order() {
        let node = tree.node(id);
        if let Some((l, r)) = node.children() {
            let (pl, pr) = branch_probs(node.left_count, node.right_count);
            prob[l] = pl;
            prob[r] = pr;
            absprob[l] = absprob[id] * pl;
            absprob[r] = absprob[id] * pr;
        }
    }
    ProbAnnotation { prob, absprob }
}

/// `p[i][j]`: probability that feature `i` is read exactly `j` times on one
/// traversal. Every row has `max_reads + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAccessDistribution {
    pub p: Vec<Vec<f64>>,
}

impl FeatureAccessDistribution {
    pub fn num_features(&self) -> usize {
        self.p.len()
    }

    pub fn get(&self, feature: usize, reads: usize) -> f64 {
        self.p
            .get(feature)
            .and_then(|row| row.get(reads))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Exact enumeration of all root-to-leaf paths: each leaf contributes its
/// absprob to `p[i][reads of i on the path]`.
pub fn feature_distribution(
    tree: &Tree,
    ann: &ProbAnnotation,
    num_features: usize,
) -> FeatureAccessDistribution {
    let max_reads = tree.depth() - 1;
    let mut p = vec![vec![0.0; max_reads + 1]; num_features];
    let mut reads = vec![0usize; num_features];
    // iterative DFS carrying the per-feature read counts of the current path
    enum Step {
        Enter(NodeId),
        Leave(usize),
    }
    let mut stack = vec![Step::Enter(0)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Leave(f) => reads[f] -= 1,
            Step::Enter(id) => {
                let node = tree.node(id);
                match (node.feature(), node.children()) {
                    (Some(f), Some((l, r))) => {
                        reads[f] += 1;
                        stack.push(Step::Leave(f));
                        stack.push(Step::Enter(r));
                        stack.push(Step::Enter(l));
                    }
                    _ => {
                        let w = ann.absprob[id];
                        for (row, &c) in p.iter_mut().zip(&reads) {
                            row[c] += w;
                        }
                    }
                }
            }
        }
    }
    FeatureAccessDistribution { p }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuitabilityScores {
    pub scores: Vec<f64>,
}

impl SuitabilityScores {
    /// Feature indices ranked by descending score, ties by smaller index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }

    pub fn top(&self, n: usize) -> Vec<usize> {
        self.ranking().into_iter().take(n).collect()
    }
}

pub fn suitability(dist: &FeatureAccessDistribution, max_depth: usize) -> SuitabilityScores {
    let scores = dist
        .p
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .take(max_depth + 1)
                .skip(1)
                .map(|(j, &pij)| pij * j as f64)
                .sum()
        })
        .collect();
    SuitabilityScores { scores }
}

pub fn tree_suitability(tree: &Tree, num_features: usize) -> SuitabilityScores {
    let ann = annotate(tree);
    let dist = feature_distribution(tree, &ann, num_features);
    suitability(&dist, tree.depth())
}

/// Per-tree scores summed over the ensemble: expected total reads of each
/// feature per input tuple.
pub fn ensemble_suitability(ensemble: &Ensemble) -> SuitabilityScores {
    let mut scores = vec![0.0; ensemble.num_features];
    for tree in &ensemble.trees {
        for (acc, s) in scores
            .iter_mut()
            .zip(tree_suitability(tree, ensemble.num_features).scores)
        {
            *acc += s;
        }
    }
    SuitabilityScores { scores }
}

/// JSON document written by the `profile` command.
#[derive(Debug, Serialize)]
pub struct ProfileDoc {
    pub annotations: BTreeMap<usize, BTreeMap<usize, NodeProbDoc>>,
    pub suitability: BTreeMap<usize, f64>,
}

#[derive(Debug, Serialize)]
pub struct NodeProbDoc {
    pub prob: f64,
    pub absprob: f64,
}

pub fn profile(ensemble: &Ensemble) -> ProfileDoc {
    let annotations = ensemble
        .trees
        .iter()
        .enumerate()
        .map(|(t, tree)| {
            let ann = annotate(tree);
            let nodes = (0..tree.len())
                .map(|id| {
                    (
                        id,
                        NodeProbDoc {
                            prob: ann.prob[id],
                            absprob: ann.absprob[id],
                        },
                    )
                })
                .collect();
            (t, nodes)
        })
        .collect();
    let suitability = ensemble_suitability(ensemble)
        .scores
        .into_iter()
        .enumerate()
        .collect();
    ProfileDoc {
        annotations,
        suitability,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{Aggregation, Node};

    #[test]
    fn t1_probabilities() {
        let ann = annotate(&t1());
        assert_eq!(ann.prob, vec![1.0, 0.6, 0.4]);
        assert_eq!(ann.absprob, vec![1.0, 0.6, 0.4]);
    }

    #[test]
    fn chain_of_fair_splits() {
        let t = chain(2);
        let ann = annotate(&t);
        // deepest leaves sit below two 50/50 decisions
        assert_eq!(ann.absprob[3], 0.25);
        assert_eq!(ann.absprob[4], 0.25);
    }

    #[test]
    fn zero_counts_fall_back_to_half() {
        let t = Tree::new(vec![Node::inner(0, 0.0, 1, 2), Node::leaf(0.0), Node::leaf(1.0)])
            .unwrap();
        assert_eq!(annotate(&t).prob, vec![1.0, 0.5, 0.5]);
    }

    #[test]
    fn t2_distribution_and_scores() {
        let t = t2();
        let dist = feature_distribution(&t, &annotate(&t), 2);
        assert_eq!(dist.get(0, 2), 0.5);
        assert_eq!(dist.get(0, 1), 0.5);
        assert_eq!(dist.get(0, 0), 0.0);
        assert_eq!(dist.get(1, 1), 0.5);
        assert_eq!(dist.get(1, 0), 0.5);
        let s = suitability(&dist, t.depth());
        assert_eq!(s.scores, vec![1.5, 0.5]);
    }

    #[test]
    fn trivial_distributions() {
        let leaf = Tree::new(vec![Node::leaf(1.0)]).unwrap();
        let dist = feature_distribution(&leaf, &annotate(&leaf), 3);
        for f in 0..3 {
            assert_eq!(dist.get(f, 0), 1.0);
        }
        assert_eq!(suitability(&dist, 1).scores, vec![0.0; 3]);

        let c = chain(4);
        let dist = feature_distribution(&c, &annotate(&c), 2);
        // not every path of this chain reads feature 0 four times; only the
        // deepest one does
        assert!((dist.p[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(suitability(&dist, c.depth()).scores[1], 0.0);

        // full chain: every leaf sits below every inner node
        let full = Tree::new(vec![
            Node::inner(0, 0.0, 1, 2).with_counts(1, 1),
            Node::inner(0, 1.0, 3, 4).with_counts(1, 1),
            Node::inner(0, 1.0, 5, 6).with_counts(1, 1),
            Node::leaf(0.0),
            Node::leaf(1.0),
            Node::leaf(2.0),
            Node::leaf(3.0),
        ])
        .unwrap();
        let dist = feature_distribution(&full, &annotate(&full), 1);
        assert_eq!(dist.get(0, full.depth() - 1), 1.0);

        let once = t1();
        let s = tree_suitability(&once, 1);
        assert_eq!(s.scores, vec![1.0]);
    }

    #[test]
    fn ensemble_scores_add_up() {
        let e = Ensemble::new(vec![t2(), t2()], 2, Aggregation::Average).unwrap();
        assert_eq!(ensemble_suitability(&e).scores, vec![3.0, 1.0]);
        let single = Ensemble::new(vec![t2()], 2, Aggregation::Average).unwrap();
        assert_eq!(ensemble_suitability(&single).scores, vec![1.5, 0.5]);

        let reads_5 = Tree::new(vec![
            Node::inner(5, 0.0, 1, 2).with_counts(3, 1),
            Node::leaf(0.0),
            Node::leaf(1.0),
        ])
        .unwrap();
        let e = Ensemble::new(vec![reads_5.clone(), t2()], 6, Aggregation::Average).unwrap();
        assert_eq!(
            ensemble_suitability(&e).scores[5],
            tree_suitability(&reads_5, 6).scores[5]
        );
    }

    #[test]
    fn ranking_ties_prefer_small_indices() {
        let s = SuitabilityScores {
            scores: vec![0.0, 2.0, 0.0, 2.0],
        };
        assert_eq!(s.ranking(), vec![1, 3, 0, 2]);
    }
}
