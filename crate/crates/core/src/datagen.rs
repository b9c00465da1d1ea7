//! Scenario sampling, dataset generation, persistence, and splitting.
//!
//! Dataset files are line-delimited JSON: one header line followed by one
//! sample object per line. Every sample is generated from a private stream
//! seeded by `mix_seed(master_seed, index, stream)` (stream 0 drives the
//! scenario and its noise, stream 1 the attack), so generation order and
//! worker count never change the output. Ids `[0, n/2)` are normal,
//! `[n/2, n)` attacked.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{self, AceLimitPolicy, AttackError, AttackSpec, Subtlety};
use crate::features::{self, FeatureError, FeatureVector};
use crate::plant::{
    self, DisturbanceSpec, IdentityHook, PlantError, ScenarioConfig, SignalId, SignalTrace,
};
use crate::rng::{mix_seed, Rng};

/// Stream selectors for [`mix_seed`].
pub const STREAM_SCENARIO: u64 = 0;
pub const STREAM_ATTACK: u64 = 1;

const FORMAT_NAME: &str = "agc-fdia-dataset";
const FORMAT_VERSION: u32 = 1;
const ATTACK_RESAMPLE_LIMIT: usize = 16;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("sample count must be even and positive, got {0}")]
    OddCount(usize),
    #[error("sample {index}: attack resampling exhausted after {attempts} attempts")]
    AttackRetriesExhausted { index: u64, attempts: usize },
    #[error("sample {index}: {source}")]
    Plant {
        index: u64,
        #[source]
        source: PlantError,
    },
    #[error("sample {index}: {source}")]
    Attack {
        index: u64,
        #[source]
        source: AttackError,
    },
    #[error("sample {index}: {source}")]
    Feature {
        index: u64,
        #[source]
        source: FeatureError,
    },
    #[error("i/o failure{}: {source}", .index.map(|i| format!(" at sample {i}")).unwrap_or_default())]
    Io {
        index: Option<u64>,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset file: {0}")]
    Malformed(String),
    #[error("not enough {label} samples: have {have}, need {need}")]
    InsufficientClass {
        label: &'static str,
        have: usize,
        need: usize,
    },
}

/// Sample class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Attack,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Attack => "attack",
        }
    }
}

/// Persisted portion of a trace: the time grid plus the three recorded
/// signals. ACE is recomputable from these via [`ace_series`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t_s: Vec<f64>,
    #[serde(rename = "delta_f1_pu")]
    pub delta_f1: Vec<f64>,
    #[serde(rename = "delta_f2_pu")]
    pub delta_f2: Vec<f64>,
    #[serde(rename = "delta_p_tie_pu")]
    pub delta_p_tie: Vec<f64>,
}

impl TraceRecord {
    pub fn len(&self) -> usize {
        self.t_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty()
    }

    pub fn signal(&self, id: SignalId) -> &[f64] {
        match id {
            SignalId::DeltaF1 => &self.delta_f1,
            SignalId::DeltaF2 => &self.delta_f2,
            SignalId::DeltaPTie => &self.delta_p_tie,
        }
    }
}

impl From<&SignalTrace> for TraceRecord {
    fn from(trace: &SignalTrace) -> Self {
        TraceRecord {
            t_s: trace.t_s.clone(),
            delta_f1: trace.delta_f1.clone(),
            delta_f2: trace.delta_f2.clone(),
            delta_p_tie: trace.delta_p_tie.clone(),
        }
    }
}

/// Recomputes the recorded ACE pair from a persisted trace. Identical (bit
/// for bit) to the ACE series the simulator recorded, since both derive from
/// the same recorded measurements.
pub fn ace_series(trace: &TraceRecord, system: &plant::SystemParams) -> (Vec<f64>, Vec<f64>) {
    let mut ace1 = Vec::with_capacity(trace.len());
    let mut ace2 = Vec::with_capacity(trace.len());
    for k in 0..trace.len() {
        ace1.push(system.area1.bias_b * trace.delta_f1[k] + trace.delta_p_tie[k]);
        ace2.push(system.area2.bias_b * trace.delta_f2[k] - trace.delta_p_tie[k]);
    }
    (ace1, ace2)
}

/// One labeled dataset entry as persisted on its own JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: u64,
    pub label: Label,
    pub scenario: ScenarioConfig,
    pub attack: Option<AttackSpec>,
    pub trace: TraceRecord,
    pub features: FeatureVector,
}

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub n_samples: usize,
    pub master_seed: u64,
    /// How per-sample streams derive from the master seed.
    pub seed_mix: String,
    /// Id layout of the two classes.
    pub layout: String,
    pub window_s: f64,
    pub record_dt_s: f64,
    pub internal_dt_s: f64,
}

impl DatasetHeader {
    fn new(n_samples: usize, master_seed: u64) -> Self {
        DatasetHeader {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            n_samples,
            master_seed,
            seed_mix: "xoshiro256++ seeded by sm64(sm64(sm64(master) ^ index) ^ stream); \
                       stream 0 = scenario+noise, stream 1 = attack"
                .into(),
            layout: "ids [0, n/2) normal, [n/2, n) attacked".into(),
            window_s: plant::WINDOW_DEFAULT,
            record_dt_s: plant::RECORD_DT_DEFAULT,
            internal_dt_s: plant::INTERNAL_DT_DEFAULT,
        }
    }
}

/// Draws one scenario: disturbance area uniform over {1, 2}, magnitude
/// normal with std 0.02 pu, start uniform on [0, 30] s (snapped to the
/// integration grid), linear/nonlinear mode a fair coin, then a fresh noise
/// seed. Draw order is fixed and load-bearing for reproducibility.
pub fn sample_scenario(rng: &mut Rng) -> ScenarioConfig {
    let area = 1 + rng.below(2) as u8;
    let magnitude = rng.normal_scaled(0.0, 0.02);
    let start_time = attack::snap_to_grid(rng.uniform(0.0, 30.0), 0.0);
    let nonlinear = rng.bernoulli(0.5);
    let noise_seed = rng.next_u64();
    let mut scenario = ScenarioConfig::new(
        DisturbanceSpec {
            area,
            magnitude,
            start_time,
        },
        noise_seed,
    );
    scenario.system.nonlinear_mode = nonlinear;
    scenario
}

/// Generates one sample from `(master_seed, index, attacked)`; bit-identical
/// on every call with the same arguments. The scenario/noise stream ignores
/// the attacked flag, so an attacked sample and the normal sample generated
/// for the same index are twins that agree exactly before the attack onset.
pub fn generate_sample(
    index: u64,
    master_seed: u64,
    attacked: bool,
) -> Result<Sample, DatagenError> {
    let mut scenario_rng = Rng::seed_from_u64(mix_seed(master_seed, index, STREAM_SCENARIO));
    let scenario = sample_scenario(&mut scenario_rng);

    if scenario.n_records() != 200 {
        return Err(DatagenError::Malformed(format!(
            "dataset scenarios must record 200 points, got {}",
            scenario.n_records()
        )));
    }

    let (trace, attack_spec) = if attacked {
        let mut attack_rng = Rng::seed_from_u64(mix_seed(master_seed, index, STREAM_ATTACK));
        let policy = AceLimitPolicy::default();
        let mut accepted = None;
        for _ in 0..ATTACK_RESAMPLE_LIMIT {
            let candidate = attack::sample_attack(&mut attack_rng, scenario.disturbance.start_time);
            match attack::enforce_ace_limit_with_trace(&scenario, candidate, &policy) {
                Ok((spec, trace)) => {
                    accepted = Some((trace, spec));
                    break;
                }
                Err(AttackError::RescaleFailed { .. }) => continue,
                Err(AttackError::Plant(source)) => {
                    return Err(DatagenError::Plant { index, source })
                }
            }
        }
        match accepted {
            Some((trace, spec)) => (trace, Some(spec)),
            None => {
                return Err(DatagenError::AttackRetriesExhausted {
                    index,
                    attempts: ATTACK_RESAMPLE_LIMIT,
                })
            }
        }
    } else {
        let trace = plant::simulate(&scenario, &IdentityHook)
            .map_err(|source| DatagenError::Plant { index, source })?;
        (trace, None)
    };

    let record = TraceRecord::from(&trace);
    let features =
        features::extract(&record).map_err(|source| DatagenError::Feature { index, source })?;

    Ok(Sample {
        id: index,
        label: if attacked {
            Label::Attack
        } else {
            Label::Normal
        },
        scenario,
        attack: attack_spec,
        trace: record,
        features,
    })
}

fn attacked_for_index(index: u64, n: usize) -> bool {
    index >= (n / 2) as u64
}

/// Generates the balanced corpus and streams it to `path`, `workers` at a
/// time. The file content depends only on `(n, master_seed)`.
pub fn generate_dataset(
    n: usize,
    master_seed: u64,
    path: &Path,
    workers: usize,
) -> Result<DatasetHeader, DatagenError> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(DatagenError::OddCount(n));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool construction cannot fail for small sizes");

    let header = DatasetHeader::new(n, master_seed);
    let file = File::create(path).map_err(|source| DatagenError::Io {
        index: None,
        source,
    })?;
    let mut out = BufWriter::new(file);
    let header_json = serde_json::to_string(&header).expect("header serialization is infallible");
    writeln!(out, "{header_json}").map_err(|source| DatagenError::Io {
        index: None,
        source,
    })?;

    const CHUNK: usize = 128;
    let mut start = 0usize;
    while start < n {
        let end = (start + CHUNK).min(n);
        let chunk: Result<Vec<Sample>, DatagenError> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| generate_sample(i as u64, master_seed, attacked_for_index(i as u64, n)))
                .collect()
        });
        for sample in chunk? {
            let line = serde_json::to_string(&sample).map_err(|e| DatagenError::Io {
                index: Some(sample.id),
                source: std::io::Error::other(e),
            })?;
            writeln!(out, "{line}").map_err(|source| DatagenError::Io {
                index: Some(sample.id),
                source,
            })?;
        }
        start = end;
    }
    out.flush().map_err(|source| DatagenError::Io {
        index: None,
        source,
    })?;
    Ok(header)
}

/// Reads a dataset file back into memory, validating format and version.
pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Sample>), DatagenError> {
    let file = File::open(path).map_err(|source| DatagenError::Io {
        index: None,
        source,
    })?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| DatagenError::Malformed("empty dataset file".into()))?
        .map_err(|source| DatagenError::Io {
            index: None,
            source,
        })?;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| DatagenError::Malformed(format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(DatagenError::Malformed(format!(
            "unexpected format {}",
            header.format
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(DatagenError::Malformed(format!(
            "unsupported dataset version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let mut samples = Vec::with_capacity(header.n_samples);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|source| DatagenError::Io {
            index: Some(i as u64),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line)
            .map_err(|e| DatagenError::Malformed(format!("line {}: {e}", i + 2)))?;
        samples.push(sample);
    }
    Ok((header, samples))
}

/// Holdout partitions: 200 per class reserved for LLM evaluation, then the
/// remainder split 70/30 stratified by label. Each partition is sorted by id.
#[derive(Debug)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub llm_eval: Vec<Sample>,
}

pub const LLM_EVAL_PER_CLASS: usize = 200;

/// Splits the dataset reproducibly: a seeded draw of 200 normal + 200
/// attacked samples into `llm_eval`, then a seeded stratified 70/30 shuffle
/// of the remainder into `train`/`test`.
pub fn split_dataset(samples: Vec<Sample>, split_seed: u64) -> Result<DatasetSplit, DatagenError> {
    let mut rng = Rng::seed_from_u64(split_seed);
    let mut by_label: [Vec<Sample>; 2] = [Vec::new(), Vec::new()];
    for s in samples {
        match s.label {
            Label::Normal => by_label[0].push(s),
            Label::Attack => by_label[1].push(s),
        }
    }
    for (idx, name) in [(0, "normal"), (1, "attack")] {
        if by_label[idx].len() < LLM_EVAL_PER_CLASS {
            return Err(DatagenError::InsufficientClass {
                label: name,
                have: by_label[idx].len(),
                need: LLM_EVAL_PER_CLASS,
            });
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut llm_eval = Vec::new();
    // Fixed processing order: normal class first, then attack.
    for class in by_label {
        let mut class = class;
        class.sort_by_key(|s| s.id);
        rng.shuffle(&mut class);
        let mut rest = class.split_off(LLM_EVAL_PER_CLASS);
        llm_eval.append(&mut class);
        let n_train = rest.len() * 7 / 10;
        let mut test_part = rest.split_off(n_train);
        train.append(&mut rest);
        test.append(&mut test_part);
    }
    train.sort_by_key(|s| s.id);
    test.sort_by_key(|s| s.id);
    llm_eval.sort_by_key(|s| s.id);
    Ok(DatasetSplit {
        train,
        test,
        llm_eval,
    })
}

/// Reference attacked scenario used by regression tests and the demo plot:
/// a tie-line measurement bias of 0.2138 pu starting at t = 15 s on the
/// nonlinear system, with a small area-1 load step at t = 5 s.
pub fn golden_tieline_case() -> (ScenarioConfig, AttackSpec) {
    let mut scenario = ScenarioConfig::new(
        DisturbanceSpec {
            area: 1,
            magnitude: 0.015,
            start_time: 5.0,
        },
        0x00A6_C0DE_5EED_0001,
    );
    scenario.system.nonlinear_mode = true;
    let spec = AttackSpec {
        target: SignalId::DeltaPTie,
        t_start: 15.0,
        f_i: -0.2138,
        f_f: -0.2138,
        scale: 1.0,
        subtlety: Subtlety::Noticeable,
        magnitude: 0.2138,
    };
    (scenario, spec)
}

/// Generates the golden sample end to end (enforcement included). The scale
/// must survive enforcement at 1.0 so the recorded magnitude stays 0.2138.
pub fn generate_golden_sample() -> Result<Sample, DatagenError> {
    let (scenario, spec) = golden_tieline_case();
    let (spec, trace) =
        attack::enforce_ace_limit_with_trace(&scenario, spec, &AceLimitPolicy::default())
            .map_err(|source| DatagenError::Attack { index: 0, source })?;
    let record = TraceRecord::from(&trace);
    let features =
        features::extract(&record).map_err(|source| DatagenError::Feature { index: 0, source })?;
    Ok(Sample {
        id: 0,
        label: Label::Attack,
        scenario,
        attack: Some(spec),
        trace: record,
        features,
    })
}
