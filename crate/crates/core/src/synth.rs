//! Random trees, ensembles and inputs for property tests, desk-scale
//! benchmarks and the `gen` command.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{Aggregation, Ensemble, Node, NodeKind, Tree};

/// Shape-driven random trees with arbitrary branch counts.
#[derive(Debug, Clone)]
pub struct RandomTreeConfig {
    /// Maximum number of nodes on a root-to-leaf path.
    pub max_depth: usize,
    pub num_features: usize,
    /// Probability that a node above `max_depth` becomes an inner node.
    pub inner_prob: f64,
    /// Branch counts are drawn from `0..=max_count`; zero counts are kept on
    /// purpose to exercise the 50/50 fallback.
    pub max_count: u64,
    /// Permute node ids (root stays 0) so children may precede parents.
    pub shuffle_ids: bool,
}

impl Default for RandomTreeConfig {
    fn default() -> Self {
        RandomTreeConfig {
            max_depth: 8,
            num_features: 6,
            inner_prob: 0.8,
            max_count: 100,
            shuffle_ids: true,
        }
    }
}

pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomTreeConfig) -> Tree {
    assert!(cfg.max_depth >= 1 && cfg.num_features >= 1);
    let mut nodes: Vec<Node> = Vec::new();
    grow_random(rng, cfg, 1, &mut nodes);
    if cfg.shuffle_ids {
        nodes = shuffle_ids(rng, nodes);
    }
    Tree::new(nodes).expect("generated tree is valid")
}

fn grow_random<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &RandomTreeConfig,
    level: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    // root is forced inner so most trees make at least one decision
    let inner = level < cfg.max_depth && (level == 1 || rng.gen_bool(cfg.inner_prob));
    if !inner {
        nodes.push(Node::leaf(rng.gen_range(0..8) as f32 * 0.5 - 1.0));
        return id;
    }
    let feature = rng.gen_range(0..cfg.num_features);
    // a coarse grid makes repeated split values (and exact ties) common
    let split = if rng.gen_bool(0.5) {
        rng.gen_range(-8..=8) as f32 * 0.25
    } else {
        rng.gen_range(-2.0f32..2.0)
    };
    nodes.push(Node::leaf(0.0));
    let left = grow_random(rng, cfg, level + 1, nodes);
    let right = grow_random(rng, cfg, level + 1, nodes);
    let (lc, rc) = if rng.gen_bool(0.05) {
        (0, 0)
    } else {
        (
            rng.gen_range(0..=cfg.max_count),
            rng.gen_range(0..=cfg.max_count),
        )
    };
    nodes[id] = Node::inner(feature, split, left, right).with_counts(lc, rc);
    id
}

fn shuffle_ids<R: Rng + ?Sized>(rng: &mut R, nodes: Vec<Node>) -> Vec<Node> {
    let n = nodes.len();
    let mut perm: Vec<usize> = (1..n).collect();
    perm.shuffle(rng);
    perm.insert(0, 0);
    let mut out = vec![Node::leaf(0.0); n];
    for (old, node) in nodes.into_iter().enumerate() {
        let mut node = node;
        if let NodeKind::Inner {
            ref mut left,
            ref mut right,
            ..
        } = node.kind
        {
            *left = perm[*left];
            *right = perm[*right];
        }
        out[perm[old]] = node;
    }
    out
}

/// Data-driven trees: splits are chosen among sample values that reach the
/// node, and branch counts are the exact number of samples routed each way,
/// the way a trained tree records them.
#[derive(Debug, Clone)]
pub struct GrowConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub num_classes: usize,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig {
            max_depth: 10,
            min_samples_split: 2,
            num_classes: 4,
        }
    }
}

pub fn grow_tree<R: Rng + ?Sized>(rng: &mut R, samples: &[Vec<f32>], cfg: &GrowConfig) -> Tree {
    let num_features = samples.first().map_or(1, Vec::len).max(1);
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut nodes = Vec::new();
    grow_data(rng, samples, idx, num_features, cfg, 1, &mut nodes);
    Tree::new(nodes).expect("grown tree is valid")
}

fn grow_data<R: Rng + ?Sized>(
    rng: &mut R,
    samples: &[Vec<f32>],
    idx: Vec<usize>,
    num_features: usize,
    cfg: &GrowConfig,
    level: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let leaf = |rng: &mut R| Node::leaf(rng.gen_range(0..cfg.num_classes.max(1)) as f32);
    if level >= cfg.max_depth || idx.len() < cfg.min_samples_split.max(2) {
        nodes.push(leaf(rng));
        return id;
    }
    // a few attempts to find a split that separates the samples
    for _ in 0..8 {
        let feature = rng.gen_range(0..num_features);
        let pivot = samples[idx[rng.gen_range(0..idx.len())]][feature];
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| samples[i][feature] <= pivot);
        if l.is_empty() || r.is_empty() {
            continue;
        }
        let (lc, rc) = (l.len() as u64, r.len() as u64);
        nodes.push(Node::leaf(0.0));
        let left = grow_data(rng, samples, l, num_features, cfg, level + 1, nodes);
        let right = grow_data(rng, samples, r, num_features, cfg, level + 1, nodes);
        nodes[id] = Node::inner(feature, pivot, left, right).with_counts(lc, rc);
        return id;
    }
    nodes.push(leaf(rng));
    id
}

/// Uniform feature rows in `[0, 1)`, with a per-feature skew so feature
/// distributions differ.
pub fn random_dataset<R: Rng + ?Sized>(rng: &mut R, rows: usize, num_features: usize) -> Vec<Vec<f32>> {
    let skew: Vec<i32> = (0..num_features).map(|_| rng.gen_range(1..4)).collect();
    (0..rows)
        .map(|_| {
            skew.iter()
                .map(|&p| rng.gen::<f32>().powi(p))
                .collect()
        })
        .collect()
}

/// A forest of data-grown trees, each trained on a bootstrap sample.
pub fn grow_ensemble<R: Rng + ?Sized>(
    rng: &mut R,
    samples: &[Vec<f32>],
    num_trees: usize,
    cfg: &GrowConfig,
) -> Ensemble {
    let num_features = samples.first().map_or(1, Vec::len).max(1);
    let trees = (0..num_trees)
        .map(|_| {
            let boot: Vec<Vec<f32>> = (0..samples.len())
                .map(|_| samples[rng.gen_range(0..samples.len())].clone())
                .collect();
            grow_tree(rng, &boot, cfg)
        })
        .collect();
    Ensemble::new(trees, num_features, Aggregation::Majority).expect("grown ensemble is valid")
}

pub fn random_ensemble<R: Rng + ?Sized>(
    rng: &mut R,
    num_trees: usize,
    cfg: &RandomTreeConfig,
) -> Ensemble {
    let trees = (0..num_trees).map(|_| random_tree(rng, cfg)).collect();
    Ensemble::new(trees, cfg.num_features, Aggregation::Average).expect("random ensemble is valid")
}

/// Random binary32 inputs for differential testing. Most values are drawn
/// from the split range; some hit split values exactly, and a few are
/// special values (signed zeros, infinities, NaN, subnormals).
pub fn random_inputs<R: Rng + ?Sized>(
    rng: &mut R,
    tree: &Tree,
    num_features: usize,
    count: usize,
) -> Vec<Vec<f32>> {
    let splits: Vec<f32> = tree
        .nodes()
        .iter()
        .filter(|n| !n.is_leaf())
        .map(|n| n.value())
        .collect();
    const SPECIAL: [f32; 7] = [
        0.0,
        -0.0,
        f32::INFINITY,
        f32::NEG_INFINITY,
        f32::NAN,
        f32::MIN_POSITIVE,
        1.0e-40,
    ];
    (0..count)
        .map(|_| {
            (0..num_features)
                .map(|_| {
                    let roll: f64 = rng.gen();
                    if roll < 0.15 && !splits.is_empty() {
                        splits[rng.gen_range(0..splits.len())]
                    } else if roll < 0.18 {
                        SPECIAL[rng.gen_range(0..SPECIAL.len())]
                    } else {
                        rng.gen_range(-2.5f32..2.5)
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_trees_respect_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..12 {
            let cfg = RandomTreeConfig {
                max_depth: d,
                ..Default::default()
            };
            let t = random_tree(&mut rng, &cfg);
            assert!(t.depth() <= d);
            assert_eq!(t.depth() == 1, d == 1);
        }
    }

    #[test]
    fn grown_counts_match_routing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_dataset(&mut rng, 300, 5);
        let t = grow_tree(&mut rng, &data, &GrowConfig::default());
        let mut reach = vec![0u64; t.len()];
        for x in &data {
            for id in t.visit(x) {
                reach[id] += 1;
            }
        }
        assert_eq!(reach[0], 300);
        for (id, node) in t.nodes().iter().enumerate() {
            if let Some((l, r)) = node.children() {
                assert_eq!(node.left_count, reach[l]);
                assert_eq!(node.right_count, reach[r]);
                assert_eq!(node.left_count + node.right_count, reach[id]);
            }
        }
    }
}
