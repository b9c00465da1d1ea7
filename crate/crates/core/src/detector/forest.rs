//! Random forest: bootstrap rows per tree, Gini splits over a fresh seeded
//! feature subset per node, prediction as the mean of per-tree class
//! frequencies.

use serde::{Deserialize, Serialize};

use crate::detector::tree::build_class_tree;
use crate::detector::{DetectorError, EnsembleModel, HyperParams, ModelKind, TrainingSet};
use crate::features::FEATURE_COUNT;
use crate::rng::{mix_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestHyperParams {
    pub n_trees: usize,
    /// `None` grows each tree until its nodes are pure or unsplittable.
    pub max_depth: Option<usize>,
    /// Features drawn per node.
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestHyperParams {
    fn default() -> Self {
        ForestHyperParams {
            n_trees: 200,
            max_depth: Some(12),
            max_features: 4,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

impl ForestHyperParams {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.n_trees == 0 {
            return Err(DetectorError::BadHyperParams("n_trees must be >= 1".into()));
        }
        if self.max_features == 0 || self.max_features > FEATURE_COUNT {
            return Err(DetectorError::BadHyperParams(format!(
                "max_features must be in [1, {FEATURE_COUNT}]"
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(DetectorError::BadHyperParams(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Trains the forest. Each tree draws from its own stream derived from
/// `(seed, tree_index)`, so the model is independent of build order.
pub fn train_rf(
    train: &TrainingSet,
    hp: &ForestHyperParams,
    seed: u64,
) -> Result<EnsembleModel, DetectorError> {
    hp.validate()?;
    train.require_both_classes()?;

    let n = train.len();
    let mut trees = Vec::with_capacity(hp.n_trees);
    for t in 0..hp.n_trees {
        let mut rng = Rng::seed_from_u64(mix_seed(seed, t as u64, 4));
        let rows: Vec<usize> = if hp.bootstrap {
            (0..n).map(|_| rng.below(n as u64) as usize).collect()
        } else {
            (0..n).collect()
        };
        trees.push(build_class_tree(
            &train.features,
            &train.labels,
            &rows,
            hp.max_depth,
            hp.max_features,
            hp.min_samples_leaf,
            &mut rng,
        ));
    }

    Ok(EnsembleModel {
        kind: ModelKind::RandomForest,
        hyperparams: HyperParams::Forest(*hp),
        base_score: 0.0,
        learning_rate: 1.0,
        training_seed: seed,
        trees,
    })
}
