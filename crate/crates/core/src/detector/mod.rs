//! Lightweight tree-ensemble binary classifiers over feature vectors.
//!
//! Two in-repo learners share one model container and file format: a
//! gradient-boosted tree classifier ([`gbdt::train_gbdt`]) and a random
//! forest ([`forest::train_rf`]). Training and prediction are
//! bit-reproducible for fixed data and seed.

pub mod forest;
pub mod gbdt;
pub mod tree;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{train_rf, ForestHyperParams};
pub use gbdt::{train_gbdt, GbdtHyperParams};
pub use tree::TreeNode;

use crate::datagen::{Label, Sample};
use crate::features::FEATURE_COUNT;
use crate::rng::{mix_seed, Rng};

const MODEL_FORMAT: &str = "agc-fdia-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("training set contains a single class")]
    SingleClass,
    #[error("training set is empty")]
    EmptySet,
    #[error("invalid hyperparameters: {0}")]
    BadHyperParams(String),
    #[error("feature vector has {got} values, expected {FEATURE_COUNT}")]
    FeatureLength { got: usize },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("unsupported model version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Feature matrix plus binary labels (attack = positive class).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<[f64; FEATURE_COUNT]>,
    pub labels: Vec<bool>,
}

impl TrainingSet {
    pub fn from_samples(samples: &[Sample]) -> TrainingSet {
        TrainingSet {
            features: samples.iter().map(|s| s.features.0).collect(),
            labels: samples.iter().map(|s| s.label == Label::Attack).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn require_both_classes(&self) -> Result<(), DetectorError> {
        if self.is_empty() {
            return Err(DetectorError::EmptySet);
        }
        let pos = self.labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == self.len() {
            return Err(DetectorError::SingleClass);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GradientBoosted,
    RandomForest,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GradientBoosted => "gradient_boosted",
            ModelKind::RandomForest => "random_forest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperParams {
    Gbdt(GbdtHyperParams),
    Forest(ForestHyperParams),
}

/// A trained ensemble. Boosted prediction is
/// `sigmoid(base_score + learning_rate * sum(tree scores))`; forest
/// prediction is the mean of per-tree attack frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub kind: ModelKind,
    pub hyperparams: HyperParams,
    pub base_score: f64,
    pub learning_rate: f64,
    pub training_seed: u64,
    pub trees: Vec<TreeNode>,
}

impl EnsembleModel {
    /// Probability of the attack class for one feature vector.
    pub fn prob_attack(&self, features: &[f64]) -> f64 {
        match self.kind {
            ModelKind::GradientBoosted => {
                let sum: f64 = self.trees.iter().map(|t| t.score(features)).sum();
                gbdt::sigmoid(self.base_score + self.learning_rate * sum)
            }
            ModelKind::RandomForest => {
                let sum: f64 = self.trees.iter().map(|t| t.class_frequency(features)).sum();
                sum / self.trees.len().max(1) as f64
            }
        }
    }
}

/// Classifier output for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub label: Label,
    /// Probability of the predicted class.
    pub confidence: f64,
    pub prob_normal: f64,
    pub prob_attack: f64,
    /// Wall-clock seconds for this prediction.
    #[serde(rename = "inference_latency_s")]
    pub inference_latency: f64,
}

/// Scores one feature vector, measuring wall-clock latency. Classification
/// ties resolve to attack so an alarm always triggers explanation.
pub fn predict(model: &EnsembleModel, features: &[f64]) -> Result<DetectionResult, DetectorError> {
    if features.len() != FEATURE_COUNT {
        return Err(DetectorError::FeatureLength {
            got: features.len(),
        });
    }
    let started = Instant::now();
    let prob_attack = model.prob_attack(features);
    let latency = started.elapsed().as_secs_f64();
    let prob_normal = 1.0 - prob_attack;
    let label = if prob_attack >= prob_normal {
        Label::Attack
    } else {
        Label::Normal
    };
    Ok(DetectionResult {
        label,
        confidence: prob_attack.max(prob_normal),
        prob_normal,
        prob_attack,
        inference_latency: latency,
    })
}

/// Median single-sample wall-clock latency over 100 repeats.
pub fn median_inference_latency(model: &EnsembleModel, features: &[f64]) -> f64 {
    let mut times: Vec<f64> = (0..100)
        .map(|_| {
            let started = Instant::now();
            std::hint::black_box(model.prob_attack(std::hint::black_box(features)));
            started.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    (times[49] + times[50]) / 2.0
}

/// Accuracy, recall, precision, F1 (attack = positive class), and mean
/// per-sample latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    #[serde(rename = "mean_latency_s")]
    pub mean_latency: f64,
}

pub fn evaluate_classifier(model: &EnsembleModel, test: &TrainingSet) -> ClassifierMetrics {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut tn = 0u64;
    let mut fn_ = 0u64;
    let mut latency_total = 0.0;
    for i in 0..test.len() {
        let result = predict(model, &test.features[i]).expect("training-set features are valid");
        latency_total += result.inference_latency;
        let predicted_attack = result.label == Label::Attack;
        match (predicted_attack, test.labels[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    metrics_from_counts(tp, fp, tn, fn_, latency_total / test.len().max(1) as f64)
}

pub fn metrics_from_counts(
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    mean_latency: f64,
) -> ClassifierMetrics {
    let total = (tp + fp + tn + fn_) as f64;
    let accuracy = if total > 0.0 {
        (tp + tn) as f64 / total
    } else {
        0.0
    };
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassifierMetrics {
        accuracy,
        recall,
        precision,
        f1,
        mean_latency,
    }
}

/// Documented search ranges for [`tune_random_search`]:
/// n_trees 50..=400, max_depth 2..=6, learning_rate log-uniform on
/// [0.03, 0.3], subsample [0.5, 1.0], min_samples_leaf 1..=10.
pub fn random_gbdt_hyperparams(rng: &mut Rng) -> GbdtHyperParams {
    GbdtHyperParams {
        n_trees: 50 + rng.below(351) as usize,
        max_depth: 2 + rng.below(5) as usize,
        learning_rate: (rng.uniform(0.03f64.ln(), 0.3f64.ln())).exp(),
        subsample: rng.uniform(0.5, 1.0),
        min_samples_leaf: 1 + rng.below(10) as usize,
    }
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: GbdtHyperParams,
    pub best_f1: f64,
    /// `(hyperparams, validation F1)` per trial, in trial order.
    pub trials: Vec<(GbdtHyperParams, f64)>,
}

/// Seeded random search over the documented ranges, maximizing validation
/// F1. Ties resolve to the earliest trial.
pub fn tune_random_search(
    train: &TrainingSet,
    valid: &TrainingSet,
    trials: usize,
    seed: u64,
) -> Result<TuneOutcome, DetectorError> {
    if trials == 0 {
        return Err(DetectorError::BadHyperParams("trials must be >= 1".into()));
    }
    let mut rng = Rng::seed_from_u64(mix_seed(seed, 0, 5));
    let mut outcome: Option<TuneOutcome> = None;
    let mut all = Vec::with_capacity(trials);
    for t in 0..trials {
        let hp = random_gbdt_hyperparams(&mut rng);
        let model = gbdt::train_gbdt(train, &hp, mix_seed(seed, t as u64, 6))?;
        let f1 = evaluate_classifier(&model, valid).f1;
        all.push((hp, f1));
        let better = match &outcome {
            Some(existing) => f1 > existing.best_f1,
            None => true,
        };
        if better {
            outcome = Some(TuneOutcome {
                best: hp,
                best_f1: f1,
                trials: Vec::new(),
            });
        }
    }
    let mut outcome = outcome.expect("at least one trial ran");
    outcome.trials = all;
    Ok(outcome)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    kind: ModelKind,
    training_seed: u64,
    base_score: f64,
    learning_rate: f64,
    hyperparams: HyperParams,
    trees: Vec<TreeNode>,
    digest: String,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Serializes a model to its canonical single-line JSON form, digest
/// included. `to_model_string(load(s)) == s` byte for byte.
pub fn to_model_string(model: &EnsembleModel) -> String {
    let mut file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        kind: model.kind,
        training_seed: model.training_seed,
        base_score: model.base_score,
        learning_rate: model.learning_rate,
        hyperparams: model.hyperparams,
        trees: model.trees.clone(),
        digest: String::new(),
    };
    let body = serde_json::to_string(&file).expect("model serialization is infallible");
    file.digest = format!("{:016x}", fnv1a64(body.as_bytes()));
    serde_json::to_string(&file).expect("model serialization is infallible")
}

pub fn from_model_string(text: &str) -> Result<EnsembleModel, DetectorError> {
    let file: ModelFile = serde_json::from_str(text.trim_end())
        .map_err(|e| DetectorError::Malformed(e.to_string()))?;
    if file.format != MODEL_FORMAT {
        return Err(DetectorError::Malformed(format!(
            "unexpected format {}",
            file.format
        )));
    }
    if file.version != MODEL_VERSION {
        return Err(DetectorError::VersionMismatch {
            found: file.version,
            expected: MODEL_VERSION,
        });
    }
    let stated = file.digest.clone();
    let blank = ModelFile {
        digest: String::new(),
        trees: file.trees.clone(),
        format: file.format.clone(),
        ..file
    };
    let body = serde_json::to_string(&blank).expect("model serialization is infallible");
    let actual = format!("{:016x}", fnv1a64(body.as_bytes()));
    if stated != actual {
        return Err(DetectorError::Malformed(format!(
            "content digest mismatch: file says {stated}, body hashes to {actual}"
        )));
    }
    let kind_is_boosted = file.kind == ModelKind::GradientBoosted;
    for tree in &file.trees {
        tree.validate(kind_is_boosted)
            .map_err(DetectorError::Malformed)?;
    }
    match (&file.kind, &file.hyperparams) {
        (ModelKind::GradientBoosted, HyperParams::Gbdt(_))
        | (ModelKind::RandomForest, HyperParams::Forest(_)) => {}
        _ => {
            return Err(DetectorError::Malformed(
                "hyperparameter block does not match model kind".into(),
            ))
        }
    }
    Ok(EnsembleModel {
        kind: file.kind,
        hyperparams: file.hyperparams,
        base_score: file.base_score,
        learning_rate: file.learning_rate,
        training_seed: file.training_seed,
        trees: file.trees,
    })
}

pub fn save_model(model: &EnsembleModel, path: &Path) -> Result<(), DetectorError> {
    let mut text = to_model_string(model);
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EnsembleModel, DetectorError> {
    let text = std::fs::read_to_string(path)?;
    from_model_string(&text)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Toy set separable on feature 0 at 0.5 with the rest held at noise
    /// values; labels alternate below/above the boundary.
    pub(crate) fn separable_toy_set(n: usize, spread: f64) -> TrainingSet {
        let mut rng = Rng::seed_from_u64(1234);
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let attack = i % 2 == 0;
            let mut row = [0.0; FEATURE_COUNT];
            row[0] = if attack {
                0.5 + 0.05 + spread * rng.uniform01()
            } else {
                0.5 - 0.05 - spread * rng.uniform01()
            };
            for slot in row.iter_mut().skip(1) {
                *slot = rng.uniform(-1.0, 1.0);
            }
            features.push(row);
            labels.push(attack);
        }
        TrainingSet { features, labels }
    }

    pub(crate) fn toy_set_from(points: Vec<(f64, bool)>) -> TrainingSet {
        let features = points
            .iter()
            .map(|(x, _)| {
                let mut row = [0.0; FEATURE_COUNT];
                row[0] = *x;
                row
            })
            .collect();
        let labels = points.into_iter().map(|(_, l)| l).collect();
        TrainingSet { features, labels }
    }

    #[test]
    fn predict_rejects_wrong_length() {
        let set = separable_toy_set(20, 0.5);
        let model = gbdt::train_gbdt(&set, &GbdtHyperParams::default(), 0).unwrap();
        assert!(matches!(
            predict(&model, &[0.0; 5]),
            Err(DetectorError::FeatureLength { got: 5 })
        ));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let set = separable_toy_set(30, 0.5);
        let model = gbdt::train_gbdt(&set, &GbdtHyperParams::default(), 1).unwrap();
        let mut rng = Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let row: [f64; FEATURE_COUNT] = core::array::from_fn(|_| rng.uniform(-2.0, 2.0));
            let r = predict(&model, &row).unwrap();
            assert!((r.prob_attack + r.prob_normal - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&r.prob_attack));
            assert_eq!(r.confidence, r.prob_attack.max(r.prob_normal));
        }
    }

    #[test]
    fn tie_resolves_to_attack() {
        // A zero-tree model trained on a balanced set predicts exactly 0.5.
        let set = toy_set_from(vec![(0.0, false), (1.0, true)]);
        let hp = GbdtHyperParams {
            n_trees: 0,
            ..Default::default()
        };
        let model = gbdt::train_gbdt(&set, &hp, 0).unwrap();
        let r = predict(&model, &[0.5; FEATURE_COUNT]).unwrap();
        assert_eq!(r.prob_attack, 0.5);
        assert_eq!(r.label, Label::Attack);
    }

    #[test]
    fn metrics_from_confusion_counts() {
        let m = metrics_from_counts(2, 1, 6, 1, 0.0);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let set = separable_toy_set(40, 0.5);
        let hp = GbdtHyperParams {
            n_trees: 20,
            subsample: 1.0,
            ..Default::default()
        };
        let model = gbdt::train_gbdt(&set, &hp, 3).unwrap();
        let m = evaluate_classifier(&model, &set);
        assert_eq!(
            (m.accuracy, m.recall, m.precision, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        let set = separable_toy_set(30, 0.5);
        let model = gbdt::train_gbdt(&set, &GbdtHyperParams::default(), 17).unwrap();
        let text = to_model_string(&model);
        let loaded = from_model_string(&text).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(to_model_string(&loaded), text);
    }

    #[test]
    fn forest_round_trip_preserves_predictions() {
        let set = separable_toy_set(30, 0.5);
        let model = forest::train_rf(&set, &ForestHyperParams::default(), 17).unwrap();
        let loaded = from_model_string(&to_model_string(&model)).unwrap();
        let mut rng = Rng::seed_from_u64(100);
        for _ in 0..100 {
            let row: [f64; FEATURE_COUNT] = core::array::from_fn(|_| rng.uniform(-2.0, 2.0));
            assert_eq!(model.prob_attack(&row), loaded.prob_attack(&row));
        }
    }

    #[test]
    fn corrupted_model_file_is_an_error() {
        let set = separable_toy_set(20, 0.5);
        let model = gbdt::train_gbdt(&set, &GbdtHyperParams::default(), 2).unwrap();
        let text = to_model_string(&model);
        let tampered = text.replacen("\"base_score\":", "\"base_score\":1e9,\"x\":", 1);
        assert!(from_model_string(&tampered).is_err());
        // Flipping a digit invalidates the digest.
        let digest_pos = text.find("\"digest\"").unwrap();
        let mut bytes = text.clone().into_bytes();
        for b in &mut bytes[digest_pos + 11..digest_pos + 15] {
            *b = if *b == b'0' { b'1' } else { b'0' };
        }
        let flipped = String::from_utf8(bytes).unwrap();
        assert!(matches!(
            from_model_string(&flipped),
            Err(DetectorError::Malformed(_))
        ));
        assert!(from_model_string("not a model").is_err());
    }

    #[test]
    fn version_mismatch_reported() {
        let set = separable_toy_set(20, 0.5);
        let model = gbdt::train_gbdt(&set, &GbdtHyperParams::default(), 2).unwrap();
        let text = to_model_string(&model).replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            from_model_string(&text),
            Err(DetectorError::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn tuning_is_deterministic_and_returns_single_trial() {
        let train = separable_toy_set(60, 0.5);
        let valid = separable_toy_set(30, 0.4);
        let one = tune_random_search(&train, &valid, 1, 5).unwrap();
        assert_eq!(one.trials.len(), 1);
        assert_eq!(one.best, one.trials[0].0);
        let a = tune_random_search(&train, &valid, 6, 5).unwrap();
        let b = tune_random_search(&train, &valid, 6, 5).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.best_f1, b.best_f1);
    }

    #[test]
    fn median_latency_is_fast() {
        let set = separable_toy_set(40, 0.5);
        let model = gbdt::train_gbdt(&set, &GbdtHyperParams::default(), 3).unwrap();
        let latency = median_inference_latency(&model, &set.features[0]);
        assert!(latency < 0.01, "median latency {latency} s");
    }
}
