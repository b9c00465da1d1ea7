//! Prompt construction: system prompt, few-shot selection, per-sample query,
//! and the token-budget pre-check. Everything here is a pure function of its
//! inputs and seeds.

use serde::Serialize;

use crate::datagen::{Label, Sample};
use crate::detector::{predict, DetectionResult, EnsembleModel};
use crate::explainer::{ExplainError, FewShotExample, GoldAnswer, PromptBundle};
use crate::plant::{SignalId, SystemParams};
use crate::rng::{mix_seed, Rng};

/// Output schema the model is instructed to produce, also used verbatim by
/// the parser's repair instruction.
pub const OUTPUT_SCHEMA: &str = r#"{"attack_target": "delta_f1" | "delta_f2" | "delta_p_tie", "attack_magnitude_pu": <number>, "attack_start_time_s": <number between 0 and 60>, "justification": "<free text>"}"#;

/// Ceiling of one token per four characters; an advisory pre-check only,
/// the endpoint enforces the hard limit.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Serialize)]
struct StatBlock {
    mean: f64,
    std: f64,
    skewness: f64,
    slope: f64,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct SignalsBlock {
    delta_f1: StatBlock,
    delta_f2: StatBlock,
    delta_p_tie: StatBlock,
}

#[derive(Serialize)]
struct NoiseBlock {
    process_noise_std_pu: f64,
    measurement_noise_std_pu: f64,
}

#[derive(Serialize)]
struct DetectionBlock {
    label: &'static str,
    confidence: f64,
    prob_normal: f64,
    prob_attack: f64,
}

#[derive(Serialize)]
struct SeriesBlock {
    stride: usize,
    t_s: Vec<f64>,
    delta_f1_pu: Vec<f64>,
    delta_f2_pu: Vec<f64>,
    delta_p_tie_pu: Vec<f64>,
}

#[derive(Serialize)]
struct QueryBody {
    sample_id: u64,
    signals: SignalsBlock,
    noise: NoiseBlock,
    detection: DetectionBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    series: Option<SeriesBlock>,
}

fn stat_block(sample: &Sample, signal: SignalId) -> StatBlock {
    let [mean, std, skewness, slope, min, max] = sample.features.stats(signal);
    StatBlock {
        mean,
        std,
        skewness,
        slope,
        min,
        max,
    }
}

fn query_body(sample: &Sample, detection: &DetectionResult, stride: Option<usize>) -> QueryBody {
    let series = stride.map(|stride| {
        let stride = stride.max(1);
        let pick = |values: &[f64]| values.iter().copied().step_by(stride).collect();
        SeriesBlock {
            stride,
            t_s: pick(&sample.trace.t_s),
            delta_f1_pu: pick(&sample.trace.delta_f1),
            delta_f2_pu: pick(&sample.trace.delta_f2),
            delta_p_tie_pu: pick(&sample.trace.delta_p_tie),
        }
    });
    QueryBody {
        sample_id: sample.id,
        signals: SignalsBlock {
            delta_f1: stat_block(sample, SignalId::DeltaF1),
            delta_f2: stat_block(sample, SignalId::DeltaF2),
            delta_p_tie: stat_block(sample, SignalId::DeltaPTie),
        },
        noise: NoiseBlock {
            process_noise_std_pu: sample.scenario.process_noise_std,
            measurement_noise_std_pu: sample.scenario.measurement_noise_std,
        },
        detection: DetectionBlock {
            label: detection.label.name(),
            confidence: detection.confidence,
            prob_normal: detection.prob_normal,
            prob_attack: detection.prob_attack,
        },
        series,
    }
}

/// Serializes the metadata the analyst sees: per-signal statistics, noise
/// settings, and the classifier verdict. Emits no ground-truth attack keys
/// or values; refuses to build queries for normal-labeled detections.
pub fn build_query(sample: &Sample, detection: &DetectionResult) -> Result<String, ExplainError> {
    build_query_with_series(sample, detection, None)
}

/// [`build_query`] with an optional decimated copy of the recorded signals
/// appended (every `stride`-th point). Off by default; the series carries
/// recorded measurements only, never ground-truth attack fields.
pub fn build_query_with_series(
    sample: &Sample,
    detection: &DetectionResult,
    series_stride: Option<usize>,
) -> Result<String, ExplainError> {
    if detection.label != Label::Attack {
        return Err(ExplainError::NormalDetection);
    }
    let body = query_body(sample, detection, series_stride);
    Ok(serde_json::to_string_pretty(&body).expect("query serialization is infallible"))
}

fn gold_json(gold: &GoldAnswer) -> String {
    let justification = format!(
        "The {} statistics sit well outside the attack-free operating band while the \
         remaining signals stay near nominal, consistent with an injected bias of about \
         {:.4} pu appearing around t = {:.1} s.",
        gold.target.name(),
        gold.magnitude_pu,
        gold.t_start_s
    );
    serde_json::json!({
        "attack_target": gold.target.name(),
        "attack_magnitude_pu": gold.magnitude_pu,
        "attack_start_time_s": gold.t_start_s,
        "justification": justification,
    })
    .to_string()
}

fn area_listing(params: &SystemParams) -> String {
    let a1 = &params.area1;
    let a2 = &params.area2;
    format!(
        "  inertia H: {} / {} s\n\
         \x20 load damping D: {} / {} pu per pu frequency\n\
         \x20 frequency bias B: {} / {} pu per pu frequency\n\
         \x20 governor time constant: {} / {} s\n\
         \x20 turbine time constant: {} / {} s\n\
         \x20 droop R: {} / {} pu\n\
         \x20 AGC integral gain Ki: {} / {}\n\
         \x20 tie-line synchronizing coefficient T12: {} pu\n\
         \x20 governor deadband width: {} pu, generation rate limit: {} pu/s\n\
         \x20 nonlinear effects (deadband, rate limit, delay) active: {}",
        a1.inertia_h,
        a2.inertia_h,
        a1.damping_d,
        a2.damping_d,
        a1.bias_b,
        a2.bias_b,
        a1.governor_tg,
        a2.governor_tg,
        a1.turbine_tt,
        a2.turbine_tt,
        a1.droop_r,
        a2.droop_r,
        a1.agc_gain_ki,
        a2.agc_gain_ki,
        params.tie_sync_t12,
        params.deadband_width,
        params.grc_limit,
        params.nonlinear_mode,
    )
}

/// Deterministic system prompt: analyst role, plant background and
/// parameters, signal and feature glossary, required output schema, and the
/// few-shot examples in selection order.
pub fn build_system_prompt(system: &SystemParams, shots: &[FewShotExample]) -> String {
    let mut out = String::with_capacity(4096);
    out.push_str(
        "You are a cybersecurity analyst for power-system operations. A local machine-learning \
         classifier monitors a two-area automatic generation control (AGC) system and has \
         flagged a measurement window as a false-data injection attack. Your job is to explain \
         the alarm: identify which measured signal was tampered with, estimate the injected \
         bias magnitude and its start time, and justify your reasoning from the statistics \
         provided.\n\n",
    );
    out.push_str(
        "System background: two interconnected control areas, each with a governor, turbine, \
         primary droop and a secondary integral controller driving its area control error \
         (ACE1 = B1*delta_f1 + delta_p_tie, ACE2 = B2*delta_f2 - delta_p_tie) to zero. \
         Positive delta_p_tie is power exported from area 1 to area 2. System parameters \
         (area 1 / area 2):\n",
    );
    out.push_str(&area_listing(system));
    out.push_str("\n\n");
    out.push_str(
        "Measured signals: delta_f1 and delta_f2 are the per-unit frequency deviations of the \
         two areas; delta_p_tie is the per-unit tie-line power deviation. Each 60-second window \
         is sampled every 0.3 s (200 points per signal). For every signal you receive six \
         statistics over the window: mean, std (population standard deviation), skewness \
         (Fisher-Pearson, population moments), slope (least-squares trend in pu per second), \
         min, and max. Healthy windows keep frequency deviations within roughly a few \
         thousandths of a unit; an injected measurement bias shows up as a shifted mean, \
         displaced min/max, or a trend that the other signals do not corroborate. The query \
         also carries the classifier verdict with its confidence and class probabilities.\n\n",
    );
    out.push_str("Respond with exactly one JSON object and nothing else, matching this schema:\n");
    out.push_str(OUTPUT_SCHEMA);
    out.push('\n');
    if !shots.is_empty() {
        out.push_str("\nWorked examples:\n");
        for (i, shot) in shots.iter().enumerate() {
            out.push_str(&format!(
                "\n### Example {}\nInput:\n{}\nExpected output:\n{}\n",
                i + 1,
                shot.input_block,
                gold_json(&shot.gold)
            ));
        }
    }
    out
}

/// Builds the few-shot candidate pool: attacked samples the model actually
/// alarms on, paired with their ground truth. Callers must keep the pool
/// disjoint from the LLM evaluation holdout.
pub fn build_shot_pool(model: &EnsembleModel, samples: &[Sample]) -> Vec<FewShotExample> {
    let mut pool = Vec::new();
    for sample in samples {
        let Some(spec) = &sample.attack else {
            continue;
        };
        let detection =
            predict(model, sample.features.as_slice()).expect("persisted features have 18 values");
        if detection.label != Label::Attack {
            continue;
        }
        let input_block = build_query(sample, &detection).expect("detection is attack-labeled");
        pool.push(FewShotExample {
            sample_id: sample.id,
            input_block,
            gold: GoldAnswer {
                target: spec.target,
                magnitude_pu: spec.magnitude,
                t_start_s: spec.t_start,
            },
        });
    }
    pool
}

/// Seeded stratified selection of `k` examples, balancing the three attack
/// targets; the remainder is assigned round-robin in fixed target order.
/// Selection order (and therefore prompt text) is deterministic.
pub fn select_few_shots(
    pool: &[FewShotExample],
    k: usize,
    seed: u64,
) -> Result<Vec<FewShotExample>, ExplainError> {
    if k > pool.len() {
        return Err(ExplainError::PoolTooSmall {
            k,
            pool: pool.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut rng = Rng::seed_from_u64(mix_seed(seed, 0, 8));
    let mut groups: [Vec<&FewShotExample>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for example in pool {
        let slot = SignalId::ALL
            .iter()
            .position(|s| *s == example.gold.target)
            .expect("target is one of the three signals");
        groups[slot].push(example);
    }
    for group in &mut groups {
        group.sort_by_key(|e| e.sample_id);
        rng.shuffle(group);
    }
    let mut selected = Vec::with_capacity(k);
    let mut cursors = [0usize; 3];
    while selected.len() < k {
        let mut progressed = false;
        for g in 0..3 {
            if selected.len() == k {
                break;
            }
            if cursors[g] < groups[g].len() {
                selected.push(groups[g][cursors[g]].clone());
                cursors[g] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(selected)
}

/// Assembles the full prompt for one sample and checks the token budget.
pub fn build_bundle(
    system: &SystemParams,
    shots: &[FewShotExample],
    sample: &Sample,
    detection: &DetectionResult,
    token_budget: usize,
) -> Result<PromptBundle, ExplainError> {
    build_bundle_with_series(system, shots, sample, detection, token_budget, None)
}

/// [`build_bundle`] with the optional decimated-series query block.
pub fn build_bundle_with_series(
    system: &SystemParams,
    shots: &[FewShotExample],
    sample: &Sample,
    detection: &DetectionResult,
    token_budget: usize,
    series_stride: Option<usize>,
) -> Result<PromptBundle, ExplainError> {
    let system_text = build_system_prompt(system, shots);
    let query_text = build_query_with_series(sample, detection, series_stride)?;
    let estimated_tokens = estimate_tokens(&system_text) + estimate_tokens(&query_text);
    if estimated_tokens > token_budget {
        return Err(ExplainError::BudgetExceeded {
            estimated: estimated_tokens,
            budget: token_budget,
        });
    }
    Ok(PromptBundle {
        system_text,
        query_text,
        shot_count: shots.len(),
        estimated_tokens,
    })
}
