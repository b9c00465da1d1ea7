//! Decision-tree building blocks shared by the boosted and forest learners:
//! exact greedy split search (variance reduction for regression targets,
//! Gini impurity for class counts) with midpoint thresholds and
//! deterministic tie-breaking by lowest feature index, then lowest
//! threshold.

use serde::{Deserialize, Serialize};

use crate::features::FEATURE_COUNT;
use crate::rng::Rng;

/// A tree node. Boosted trees carry a log-odds contribution in their
/// leaves; forest trees carry per-class sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        score: f64,
    },
    ClassLeaf {
        counts: [u64; 2],
    },
}

impl TreeNode {
    /// Routes a sample to its leaf.
    pub fn leaf_for<'a>(&'a self, x: &[f64]) -> &'a TreeNode {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
                _ => return node,
            }
        }
    }

    /// Log-odds contribution (boosted leaves).
    pub fn score(&self, x: &[f64]) -> f64 {
        match self.leaf_for(x) {
            TreeNode::Leaf { score } => *score,
            _ => 0.0,
        }
    }

    /// Attack-class frequency (forest leaves).
    pub fn class_frequency(&self, x: &[f64]) -> f64 {
        match self.leaf_for(x) {
            TreeNode::ClassLeaf { counts } => {
                let total = counts[0] + counts[1];
                if total == 0 {
                    0.5
                } else {
                    counts[1] as f64 / total as f64
                }
            }
            _ => 0.5,
        }
    }

    pub fn validate(&self, kind_is_boosted: bool) -> Result<(), String> {
        match self {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= FEATURE_COUNT {
                    return Err(format!("feature index {feature} out of range"));
                }
                if !threshold.is_finite() {
                    return Err("non-finite split threshold".into());
                }
                left.validate(kind_is_boosted)?;
                right.validate(kind_is_boosted)
            }
            TreeNode::Leaf { score } => {
                if !kind_is_boosted {
                    return Err("score leaf in a forest model".into());
                }
                if !score.is_finite() {
                    return Err("non-finite leaf score".into());
                }
                Ok(())
            }
            TreeNode::ClassLeaf { .. } => {
                if kind_is_boosted {
                    return Err("class-count leaf in a boosted model".into());
                }
                Ok(())
            }
        }
    }
}

pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Exact greedy variance-reduction split over the given candidate features.
/// Thresholds are midpoints between consecutive distinct sorted values; both
/// children must hold at least `min_samples_leaf` rows.
pub fn best_variance_split(
    data: &[[f64; FEATURE_COUNT]],
    targets: &[f64],
    rows: &[usize],
    candidate_features: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_samples_leaf.max(1) {
        return None;
    }
    let total_sum: f64 = rows.iter().map(|&r| targets[r]).sum();
    let total_sq: f64 = rows.iter().map(|&r| targets[r] * targets[r]).sum();
    let parent_sse = total_sq - total_sum * total_sum / n as f64;

    let mut best: Option<SplitChoice> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &feature in candidate_features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (data[r][feature], targets[r])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for i in 0..n - 1 {
            left_sum += pairs[i].1;
            left_sq += pairs[i].1 * pairs[i].1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let left_n = i + 1;
            let right_n = n - left_n;
            if left_n < min_samples_leaf || right_n < min_samples_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / left_n as f64)
                + (right_sq - right_sum * right_sum / right_n as f64);
            let gain = parent_sse - sse;
            // Strict improvement keeps the first (lowest feature, lowest
            // threshold) candidate on exact ties.
            if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                best = Some(SplitChoice {
                    feature,
                    threshold: (pairs[i].0 + pairs[i + 1].0) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

/// Exact greedy Gini-impurity split (weighted child impurity decrease).
pub fn best_gini_split(
    data: &[[f64; FEATURE_COUNT]],
    labels: &[bool],
    rows: &[usize],
    candidate_features: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_samples_leaf.max(1) {
        return None;
    }
    let total_pos: u64 = rows.iter().filter(|&&r| labels[r]).count() as u64;
    let total = n as u64;
    let gini = |pos: u64, count: u64| -> f64 {
        if count == 0 {
            return 0.0;
        }
        let p = pos as f64 / count as f64;
        2.0 * p * (1.0 - p)
    };
    let parent_cost = gini(total_pos, total) * n as f64;

    let mut best: Option<SplitChoice> = None;
    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(n);
    for &feature in candidate_features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (data[r][feature], labels[r])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_pos: u64 = 0;
        for i in 0..n - 1 {
            left_pos += pairs[i].1 as u64;
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let left_n = (i + 1) as u64;
            let right_n = total - left_n;
            if (left_n as usize) < min_samples_leaf || (right_n as usize) < min_samples_leaf {
                continue;
            }
            let right_pos = total_pos - left_pos;
            let cost =
                gini(left_pos, left_n) * left_n as f64 + gini(right_pos, right_n) * right_n as f64;
            let gain = parent_cost - cost;
            if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                best = Some(SplitChoice {
                    feature,
                    threshold: (pairs[i].0 + pairs[i + 1].0) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

fn partition(
    data: &[[f64; FEATURE_COUNT]],
    rows: &[usize],
    feature: usize,
    threshold: f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        if data[r][feature] <= threshold {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    (left, right)
}

/// Regression tree over residual targets; leaves hold the mean residual.
pub fn build_regression_tree(
    data: &[[f64; FEATURE_COUNT]],
    targets: &[f64],
    rows: &[usize],
    max_depth: usize,
    min_samples_leaf: usize,
) -> TreeNode {
    let mean = rows.iter().map(|&r| targets[r]).sum::<f64>() / rows.len() as f64;
    if max_depth == 0 || rows.len() < 2 {
        return TreeNode::Leaf { score: mean };
    }
    let all_features: Vec<usize> = (0..FEATURE_COUNT).collect();
    match best_variance_split(data, targets, rows, &all_features, min_samples_leaf) {
        Some(split) => {
            let (left_rows, right_rows) = partition(data, rows, split.feature, split.threshold);
            if left_rows.is_empty() || right_rows.is_empty() {
                return TreeNode::Leaf { score: mean };
            }
            TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: Box::new(build_regression_tree(
                    data,
                    targets,
                    &left_rows,
                    max_depth - 1,
                    min_samples_leaf,
                )),
                right: Box::new(build_regression_tree(
                    data,
                    targets,
                    &right_rows,
                    max_depth - 1,
                    min_samples_leaf,
                )),
            }
        }
        None => TreeNode::Leaf { score: mean },
    }
}

/// Classification tree with a fresh random feature subset drawn at every
/// node; leaves hold per-class counts. `max_depth` of `None` grows until
/// nodes are pure or unsplittable.
pub fn build_class_tree(
    data: &[[f64; FEATURE_COUNT]],
    labels: &[bool],
    rows: &[usize],
    max_depth: Option<usize>,
    max_features: usize,
    min_samples_leaf: usize,
    rng: &mut Rng,
) -> TreeNode {
    let pos = rows.iter().filter(|&&r| labels[r]).count() as u64;
    let counts = [rows.len() as u64 - pos, pos];
    let depth_exhausted = max_depth == Some(0);
    if depth_exhausted || rows.len() < 2 || pos == 0 || pos == rows.len() as u64 {
        return TreeNode::ClassLeaf { counts };
    }
    let features = if max_features >= FEATURE_COUNT {
        (0..FEATURE_COUNT).collect()
    } else {
        // Sorted so identical subsets always scan in the same order.
        let mut f = rng.sample_indices(FEATURE_COUNT, max_features);
        f.sort_unstable();
        f
    };
    match best_gini_split(data, labels, rows, &features, min_samples_leaf) {
        Some(split) => {
            let (left_rows, right_rows) = partition(data, rows, split.feature, split.threshold);
            if left_rows.is_empty() || right_rows.is_empty() {
                return TreeNode::ClassLeaf { counts };
            }
            let child_depth = max_depth.map(|d| d - 1);
            TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: Box::new(build_class_tree(
                    data,
                    labels,
                    &left_rows,
                    child_depth,
                    max_features,
                    min_samples_leaf,
                    rng,
                )),
                right: Box::new(build_class_tree(
                    data,
                    labels,
                    &right_rows,
                    child_depth,
                    max_features,
                    min_samples_leaf,
                    rng,
                )),
            }
        }
        None => TreeNode::ClassLeaf { counts },
    }
}
