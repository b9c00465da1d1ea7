//! Stagewise gradient boosting with logistic loss.
//!
//! Each stage fits a regression tree to the negative gradients
//! `y_i - sigmoid(F_i)` using exact variance-reduction splits, optionally on
//! a seeded row subsample, and adds its leaf means to the running log-odds
//! scaled by the learning rate. With a learning rate at or below 1 the
//! training loss is non-increasing stage over stage.

use serde::{Deserialize, Serialize};

use crate::detector::tree::build_regression_tree;
use crate::detector::{DetectorError, EnsembleModel, HyperParams, ModelKind, TrainingSet};
use crate::rng::{mix_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtHyperParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbdtHyperParams {
    fn default() -> Self {
        GbdtHyperParams {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            subsample: 0.8,
            min_samples_leaf: 5,
        }
    }
}

impl GbdtHyperParams {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(DetectorError::BadHyperParams(
                "learning_rate must be > 0".into(),
            ));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(DetectorError::BadHyperParams(
                "subsample must be in (0, 1]".into(),
            ));
        }
        if self.max_depth == 0 {
            return Err(DetectorError::BadHyperParams(
                "max_depth must be >= 1".into(),
            ));
        }
        if self.min_samples_leaf == 0 {
            return Err(DetectorError::BadHyperParams(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains the boosted classifier. Deterministic for fixed data and seed.
pub fn train_gbdt(
    train: &TrainingSet,
    hp: &GbdtHyperParams,
    seed: u64,
) -> Result<EnsembleModel, DetectorError> {
    hp.validate()?;
    train.require_both_classes()?;

    let n = train.len();
    let pos = train.labels.iter().filter(|&&l| l).count();
    let prior = (pos as f64 / n as f64).clamp(1e-12, 1.0 - 1e-12);
    let base_score = (prior / (1.0 - prior)).ln();

    let mut rng = Rng::seed_from_u64(mix_seed(seed, 0, 3));
    let mut scores = vec![base_score; n];
    let mut residuals = vec![0.0; n];
    let mut trees = Vec::with_capacity(hp.n_trees);

    for _ in 0..hp.n_trees {
        for ((residual, &label), &score) in residuals.iter_mut().zip(&train.labels).zip(&scores) {
            *residual = label as u8 as f64 - sigmoid(score);
        }
        let rows: Vec<usize> = if hp.subsample < 1.0 {
            let k = ((n as f64 * hp.subsample) as usize).max(1);
            let mut picked = rng.sample_indices(n, k);
            picked.sort_unstable();
            picked
        } else {
            (0..n).collect()
        };
        let tree = build_regression_tree(
            &train.features,
            &residuals,
            &rows,
            hp.max_depth,
            hp.min_samples_leaf,
        );
        for (score, row) in scores.iter_mut().zip(&train.features) {
            *score += hp.learning_rate * tree.score(row);
        }
        trees.push(tree);
    }

    Ok(EnsembleModel {
        kind: ModelKind::GradientBoosted,
        hyperparams: HyperParams::Gbdt(*hp),
        base_score,
        learning_rate: hp.learning_rate,
        training_seed: seed,
        trees,
    })
}

/// Mean logistic loss of a boosted model on a training set.
pub fn logistic_loss(model: &EnsembleModel, set: &TrainingSet) -> f64 {
    let mut total = 0.0;
    for i in 0..set.len() {
        let p = model
            .prob_attack(&set.features[i])
            .clamp(1e-15, 1.0 - 1e-15);
        let y = set.labels[i] as u8 as f64;
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / set.len() as f64
}

/// Loss after each boosting stage, index 0 being the bare prior.
pub fn staged_logistic_loss(model: &EnsembleModel, set: &TrainingSet) -> Vec<f64> {
    let n = set.len();
    let mut scores = vec![model.base_score; n];
    let loss = |scores: &[f64]| -> f64 {
        let mut total = 0.0;
        for (&score, &label) in scores.iter().zip(&set.labels) {
            let p = sigmoid(score).clamp(1e-15, 1.0 - 1e-15);
            let y = label as u8 as f64;
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        total / n as f64
    };
    let mut out = vec![loss(&scores)];
    for tree in &model.trees {
        for (score, row) in scores.iter_mut().zip(&set.features) {
            *score += model.learning_rate * tree.score(row);
        }
        out.push(loss(&scores));
    }
    out
}
