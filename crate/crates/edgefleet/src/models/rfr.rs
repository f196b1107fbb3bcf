//! Random forest regression: bagged variance-reduction trees with a random
//! feature subset per split and mean leaves.
//!
//! Trees are array-encoded; children always sit at higher indices than their
//! parent. Split thresholds are searched over fixed histogram bins, which
//! keeps tree construction linear in the node size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pipeline::FEATURE_COUNT;

use super::ModelError;

const SPLIT_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Checks the array encoding: child indices in range and strictly greater
    /// than their parent, split features in range.
    pub fn validate(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let TreeNode::Split {
                feature,
                left,
                right,
                ..
            } = node
            {
                if *feature >= FEATURE_COUNT {
                    return false;
                }
                if *left <= idx || *right <= idx {
                    return false;
                }
                if *left >= self.nodes.len() || *right >= self.nodes.len() {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfrConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub feature_subset: usize,
}

impl Default for RfrConfig {
    fn default() -> Self {
        RfrConfig {
            n_trees: 100,
            max_depth: 10,
            min_samples_leaf: 5,
            feature_subset: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfrParams {
    pub trees: Vec<Tree>,
    pub config: RfrConfig,
    pub seed: u64,
}

impl RfrParams {
    /// Forest output: arithmetic mean of the per-tree predictions.
    pub fn predict(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn tree_predictions(&self, x: &[f64; FEATURE_COUNT]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }
}

pub fn train(
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
    config: &RfrConfig,
    seed: u64,
) -> Result<RfrParams, ModelError> {
    let n = x.len();
    if n == 0 {
        return Err(ModelError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        trees.push(build_tree(x, y, sample, config, &mut rng));
    }
    Ok(RfrParams {
        trees,
        config: config.clone(),
        seed,
    })
}

fn build_tree(
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
    indices: Vec<usize>,
    config: &RfrConfig,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut nodes = Vec::new();
    build_node(x, y, indices, 0, config, rng, &mut nodes);
    Tree { nodes }
}

/// Appends the subtree for `indices` and returns its root index.
fn build_node(
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
    indices: Vec<usize>,
    depth: usize,
    config: &RfrConfig,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let m = indices.len();
    let sum: f64 = indices.iter().map(|&i| y[i]).sum();
    let mean = sum / m as f64;

    if depth >= config.max_depth || m < 2 * config.min_samples_leaf {
        nodes.push(TreeNode::Leaf { value: mean });
        return nodes.len() - 1;
    }

    let split = find_split(x, y, &indices, config, rng);
    let (feature, threshold) = match split {
        Some(s) => s,
        None => {
            nodes.push(TreeNode::Leaf { value: mean });
            return nodes.len() - 1;
        }
    };

    let mut left = Vec::new();
    let mut right = Vec::new();
    for &i in &indices {
        if x[i][feature] <= threshold {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    drop(indices);

    let self_idx = nodes.len();
    nodes.push(TreeNode::Leaf { value: mean }); // placeholder, patched below
    let left_idx = build_node(x, y, left, depth + 1, config, rng, nodes);
    let right_idx = build_node(x, y, right, depth + 1, config, rng, nodes);
    nodes[self_idx] = TreeNode::Split {
        feature,
        threshold,
        left: left_idx,
        right: right_idx,
    };
    self_idx
}

/// Best (feature, threshold) over a random feature subset, by child
/// sum-of-squares reduction over histogram-bin boundaries.
fn find_split(
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
    indices: &[usize],
    config: &RfrConfig,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    let features = sample_features(config.feature_subset, rng);
    let m = indices.len();
    let total_sum: f64 = indices.iter().map(|&i| y[i]).sum();

    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, score)
    for &feature in &features {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in indices {
            let v = x[i][feature];
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        if !(hi > lo) {
            continue; // constant feature in this node
        }
        let width = (hi - lo) / SPLIT_BINS as f64;
        let mut counts = [0usize; SPLIT_BINS];
        let mut sums = [0.0f64; SPLIT_BINS];
        for &i in indices {
            let mut bin = ((x[i][feature] - lo) / width) as usize;
            if bin >= SPLIT_BINS {
                bin = SPLIT_BINS - 1;
            }
            counts[bin] += 1;
            sums[bin] += y[i];
        }
        let mut left_count = 0usize;
        let mut left_sum = 0.0;
        for k in 0..SPLIT_BINS - 1 {
            left_count += counts[k];
            left_sum += sums[k];
            let right_count = m - left_count;
            if left_count < config.min_samples_leaf || right_count < config.min_samples_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let score = left_sum * left_sum / left_count as f64
                + right_sum * right_sum / right_count as f64;
            if best.map_or(true, |(_, _, s)| score > s) {
                let threshold = lo + width * (k + 1) as f64;
                best = Some((feature, threshold, score));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

/// Draws `k` distinct feature indices, order given by the RNG.
fn sample_features(k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..FEATURE_COUNT).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k.min(FEATURE_COUNT) {
        let pick = rng.gen_range(0..pool.len());
        out.push(pool.swap_remove(pick));
    }
    out
}
