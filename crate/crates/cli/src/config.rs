//! Run configuration: one TOML file with flag overrides on top.
//! Precedence is flags > file > built-in defaults; unknown keys are
//! rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub seeds: SeedsConfig,
    pub detector: DetectorConfig,
    pub explainer: ExplainerConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub reports_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: "data/dataset.jsonl".into(),
            model: "data/model.json".into(),
            reports_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsConfig {
    pub master: u64,
    pub split: u64,
    pub train: u64,
    pub tuning: u64,
    pub shots: u64,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        SeedsConfig {
            master: 20240501,
            split: 1001,
            train: 4004,
            tuning: 2002,
            shots: 3003,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Gbdt,
    RandomForest,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub n_trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub learning_rate: Option<f64>,
    pub subsample: Option<f64>,
    pub min_samples_leaf: Option<usize>,
    pub max_features: Option<usize>,
    pub bootstrap: Option<bool>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: DetectorKind::Gbdt,
            n_trees: None,
            max_depth: None,
            learning_rate: None,
            subsample: None,
            min_samples_leaf: None,
            max_features: None,
            bootstrap: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainerConfig {
    pub base_url: String,
    pub model_name: String,
    pub request_seed: u64,
    pub max_in_flight: usize,
    pub token_budget: usize,
    pub retry_max_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub shot_counts: Vec<usize>,
    pub eval_limit: usize,
    pub fault_rate: f64,
    pub fault_seed: u64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            base_url: "https://api.openai.com".into(),
            model_name: "gpt-4o-mini".into(),
            request_seed: 42,
            max_in_flight: 4,
            token_budget: 16_000,
            retry_max_attempts: 3,
            retry_base_delay_ms: 500,
            shot_counts: vec![0, 5, 10, 20],
            eval_limit: 100,
            fault_rate: 0.10,
            fault_seed: 7,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_without_a_file() {
        let cfg = RunConfig::load(None).unwrap();
        assert_eq!(cfg.seeds.master, 20240501);
        assert_eq!(cfg.explainer.shot_counts, vec![0, 5, 10, 20]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[seeds]\nmasterr = 3\n").unwrap_err();
        assert!(err.to_string().contains("masterr"));
    }

    #[test]
    fn partial_files_take_defaults_elsewhere() {
        let cfg: RunConfig = toml::from_str("[seeds]\nmaster = 9\n").unwrap();
        assert_eq!(cfg.seeds.master, 9);
        assert_eq!(cfg.seeds.split, 1001);
        assert_eq!(cfg.explainer.eval_limit, 100);
    }
}
