//! Explanation scoring and report rendering.
//!
//! [`score`] compares parsed explanations against ground truth: exact
//! canonicalized target match, mean absolute error on magnitude and onset.
//! Samples whose response never parsed are excluded from the error means
//! and surfaced as a count. [`render_report`] emits a Markdown document and
//! a machine-readable CSV whose parse/render cycle is a fixed point.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Label, Sample};
use crate::detector::{predict, ClassifierMetrics, EnsembleModel};
use crate::explainer::{
    build_bundle_with_series, explain_with_repair, select_few_shots, ChatBackend, ExplainError,
    ExplanationReport, FewShotExample, LlmClientConfig,
};
use crate::plant::{SignalId, SystemParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(
        "outcome/truth alignment broken at position {position}: sample {outcome_id} vs {truth_id}"
    )]
    Alignment {
        position: usize,
        outcome_id: u64,
        truth_id: u64,
    },
    #[error("length mismatch: {outcomes} outcomes vs {truths} truths")]
    LengthMismatch { outcomes: usize, truths: usize },
    #[error("malformed report csv: {0}")]
    MalformedReport(String),
    #[error(transparent)]
    Explain(#[from] ExplainError),
}

/// Ground truth for one attacked sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackTruth {
    pub sample_id: u64,
    pub target: SignalId,
    pub magnitude_pu: f64,
    pub t_start_s: f64,
}

impl AttackTruth {
    pub fn from_sample(sample: &Sample) -> Option<AttackTruth> {
        sample.attack.as_ref().map(|spec| AttackTruth {
            sample_id: sample.id,
            target: spec.target,
            magnitude_pu: spec.magnitude,
            t_start_s: spec.t_start,
        })
    }
}

/// Result of one explanation attempt; exactly one of `report`/`error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationOutcome {
    pub sample_id: u64,
    pub report: Option<ExplanationReport>,
    pub error: Option<String>,
    /// Requests issued for this sample (1, or 2 after a repair attempt).
    pub requests: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMetrics {
    pub target_accuracy_pct: f64,
    pub mae_magnitude_pu: f64,
    pub mae_onset_s: f64,
    pub mean_latency_s: f64,
    pub n_evaluated: usize,
    pub n_parse_failures: usize,
}

/// Scores outcomes against truths aligned by sample id.
pub fn score(
    outcomes: &[ExplanationOutcome],
    truths: &[AttackTruth],
) -> Result<ExplanationMetrics, EvalError> {
    if outcomes.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            outcomes: outcomes.len(),
            truths: truths.len(),
        });
    }
    let mut n_evaluated = 0usize;
    let mut n_parse_failures = 0usize;
    let mut target_hits = 0usize;
    let mut magnitude_err = 0.0;
    let mut onset_err = 0.0;
    let mut latency_total = 0.0;
    for (position, (outcome, truth)) in outcomes.iter().zip(truths).enumerate() {
        if outcome.sample_id != truth.sample_id {
            return Err(EvalError::Alignment {
                position,
                outcome_id: outcome.sample_id,
                truth_id: truth.sample_id,
            });
        }
        match &outcome.report {
            Some(report) => {
                n_evaluated += 1;
                if report.attack_target == truth.target {
                    target_hits += 1;
                }
                magnitude_err += (report.attack_magnitude_pu - truth.magnitude_pu).abs();
                onset_err += (report.attack_start_time_s - truth.t_start_s).abs();
                latency_total += report.latency_s;
            }
            None => n_parse_failures += 1,
        }
    }
    let denom = n_evaluated.max(1) as f64;
    Ok(ExplanationMetrics {
        target_accuracy_pct: if n_evaluated == 0 {
            0.0
        } else {
            100.0 * target_hits as f64 / denom
        },
        mae_magnitude_pu: magnitude_err / denom,
        mae_onset_s: onset_err / denom,
        mean_latency_s: latency_total / denom,
        n_evaluated,
        n_parse_failures,
    })
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub model: String,
    pub metrics: ClassifierMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationRow {
    pub model: String,
    pub shots: usize,
    pub metrics: ExplanationMetrics,
}

/// Ordered run metadata rendered at the top of both report files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetadata(pub Vec<(String, String)>);

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub markdown: String,
    pub csv: String,
}

/// Latencies are wall-clock measurements; quantizing them to milliseconds
/// keeps seeded mock runs byte-identical while matching the precision the
/// comparison tables use.
fn quantize_latency(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

fn csv_escape(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

const DETECTION_HEADER: &str = "model,accuracy,recall,precision,f1,latency_s";
const EXPLANATION_HEADER: &str =
    "model,shots,target_accuracy_pct,mae_magnitude_pu,mae_onset_s,latency_s,n_evaluated,n_parse_failures";

/// Renders both report files. Rows are sorted by `(model, shots)`; the
/// Markdown document omits empty sections while the CSV always carries all
/// three blocks (metadata, detection, explanation) separated by blank lines.
pub fn render_report(
    detection: &[DetectionRow],
    explanation: &[ExplanationRow],
    meta: &RunMetadata,
) -> ReportFiles {
    let mut detection = detection.to_vec();
    detection.sort_by(|a, b| a.model.cmp(&b.model));
    let mut explanation = explanation.to_vec();
    explanation.sort_by(|a, b| a.model.cmp(&b.model).then(a.shots.cmp(&b.shots)));

    let mut md = String::from("# AGC attack detection and explanation report\n");
    if !meta.0.is_empty() {
        md.push_str("\n## Run metadata\n\n");
        for (key, value) in &meta.0 {
            md.push_str(&format!("- {key}: {value}\n"));
        }
    }
    if !detection.is_empty() {
        md.push_str("\n## Attack detection\n\n");
        md.push_str("| Model | Accuracy | Recall | Precision | F1 score | Latency (s) |\n");
        md.push_str("|-------|---------:|-------:|----------:|---------:|------------:|\n");
        for row in &detection {
            let m = &row.metrics;
            md.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.3} |\n",
                row.model, m.accuracy, m.recall, m.precision, m.f1, m.mean_latency
            ));
        }
    }
    if !explanation.is_empty() {
        md.push_str("\n## Attack explanation\n\n");
        md.push_str(
            "| Model | Shots | Target accuracy (%) | MAE magnitude (pu) | MAE onset (s) | \
             Latency (s) | Evaluated | Parse failures |\n",
        );
        md.push_str(
            "|-------|------:|--------------------:|-------------------:|--------------:|\
             ------------:|----------:|---------------:|\n",
        );
        for row in &explanation {
            let m = &row.metrics;
            md.push_str(&format!(
                "| {} | {} | {:.2} | {:.5} | {:.2} | {:.3} | {} | {} |\n",
                row.model,
                row.shots,
                m.target_accuracy_pct,
                m.mae_magnitude_pu,
                m.mae_onset_s,
                m.mean_latency_s,
                m.n_evaluated,
                m.n_parse_failures
            ));
        }
    }

    let mut csv = String::from("key,value\n");
    for (key, value) in &meta.0 {
        csv.push_str(&format!("{},{}\n", csv_escape(key), csv_escape(value)));
    }
    csv.push('\n');
    csv.push_str(DETECTION_HEADER);
    csv.push('\n');
    for row in &detection {
        let m = &row.metrics;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_escape(&row.model),
            m.accuracy,
            m.recall,
            m.precision,
            m.f1,
            quantize_latency(m.mean_latency)
        ));
    }
    csv.push('\n');
    csv.push_str(EXPLANATION_HEADER);
    csv.push('\n');
    for row in &explanation {
        let m = &row.metrics;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_escape(&row.model),
            row.shots,
            m.target_accuracy_pct,
            m.mae_magnitude_pu,
            m.mae_onset_s,
            quantize_latency(m.mean_latency_s),
            m.n_evaluated,
            m.n_parse_failures
        ));
    }

    ReportFiles { markdown: md, csv }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut chars = line.chars().peekable();
    let mut in_quotes = false;
    while let Some(c) = chars.next() {
        if in_quotes {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    field.push('"');
                } else {
                    in_quotes = false;
                }
            } else {
                field.push(c);
            }
        } else {
            match c {
                '"' => in_quotes = true,
                ',' => fields.push(std::mem::take(&mut field)),
                _ => field.push(c),
            }
        }
    }
    fields.push(field);
    fields
}

fn parse_f64(s: &str, what: &str) -> Result<f64, EvalError> {
    s.parse()
        .map_err(|_| EvalError::MalformedReport(format!("bad {what}: {s:?}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize, EvalError> {
    s.parse()
        .map_err(|_| EvalError::MalformedReport(format!("bad {what}: {s:?}")))
}

/// Parses a CSV produced by [`render_report`] back into its rows and
/// metadata; `render(parse(csv))` reproduces the input byte for byte.
pub fn parse_report_csv(
    text: &str,
) -> Result<(RunMetadata, Vec<DetectionRow>, Vec<ExplanationRow>), EvalError> {
    let blocks: Vec<&str> = text.trim_end_matches('\n').split("\n\n").collect();
    if blocks.len() != 3 {
        return Err(EvalError::MalformedReport(format!(
            "expected 3 blocks, found {}",
            blocks.len()
        )));
    }

    let mut meta_lines = blocks[0].lines();
    if meta_lines.next() != Some("key,value") {
        return Err(EvalError::MalformedReport("missing metadata header".into()));
    }
    let mut meta = RunMetadata::default();
    for line in meta_lines {
        let fields = split_csv_line(line);
        if fields.len() != 2 {
            return Err(EvalError::MalformedReport(format!(
                "bad metadata row {line:?}"
            )));
        }
        meta.0.push((fields[0].clone(), fields[1].clone()));
    }

    let mut det_lines = blocks[1].lines();
    if det_lines.next() != Some(DETECTION_HEADER) {
        return Err(EvalError::MalformedReport(
            "missing detection header".into(),
        ));
    }
    let mut detection = Vec::new();
    for line in det_lines {
        let f = split_csv_line(line);
        if f.len() != 6 {
            return Err(EvalError::MalformedReport(format!(
                "bad detection row {line:?}"
            )));
        }
        detection.push(DetectionRow {
            model: f[0].clone(),
            metrics: ClassifierMetrics {
                accuracy: parse_f64(&f[1], "accuracy")?,
                recall: parse_f64(&f[2], "recall")?,
                precision: parse_f64(&f[3], "precision")?,
                f1: parse_f64(&f[4], "f1")?,
                mean_latency: parse_f64(&f[5], "latency")?,
            },
        });
    }

    let mut exp_lines = blocks[2].lines();
    if exp_lines.next() != Some(EXPLANATION_HEADER) {
        return Err(EvalError::MalformedReport(
            "missing explanation header".into(),
        ));
    }
    let mut explanation = Vec::new();
    for line in exp_lines {
        let f = split_csv_line(line);
        if f.len() != 8 {
            return Err(EvalError::MalformedReport(format!(
                "bad explanation row {line:?}"
            )));
        }
        explanation.push(ExplanationRow {
            model: f[0].clone(),
            shots: parse_usize(&f[1], "shots")?,
            metrics: ExplanationMetrics {
                target_accuracy_pct: parse_f64(&f[2], "target accuracy")?,
                mae_magnitude_pu: parse_f64(&f[3], "magnitude MAE")?,
                mae_onset_s: parse_f64(&f[4], "onset MAE")?,
                mean_latency_s: parse_f64(&f[5], "latency")?,
                n_evaluated: parse_usize(&f[6], "evaluated count")?,
                n_parse_failures: parse_usize(&f[7], "failure count")?,
            },
        });
    }

    Ok((meta, detection, explanation))
}

// ---------------------------------------------------------------------------
// Shot sweep
// ---------------------------------------------------------------------------

/// Inputs shared across one sweep run.
pub struct SweepContext<'a> {
    pub model: &'a EnsembleModel,
    pub system: &'a SystemParams,
    /// Attacked holdout samples reserved for LLM evaluation.
    pub eval_attacked: &'a [Sample],
    /// Few-shot candidates, disjoint from the holdout.
    pub shot_pool: &'a [FewShotExample],
    pub client: &'a LlmClientConfig,
    pub shots_seed: u64,
    /// Evaluate at most this many samples per shot count.
    pub limit: usize,
    /// When set, append every `stride`-th recorded point to each query.
    pub series_stride: Option<usize>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub shots: usize,
    pub metrics: ExplanationMetrics,
    pub outcomes: Vec<ExplanationOutcome>,
    pub truths: Vec<AttackTruth>,
    /// Holdout samples the detector did not alarm on (skipped by design).
    pub n_skipped_not_alarmed: usize,
}

/// Runs jobs over a bounded worker pool; results keep input order.
pub fn run_bounded<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    run: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let cursor = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = run(&items[i]);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

enum SweepRun {
    Skipped,
    Attempted(Box<ExplanationOutcome>, AttackTruth),
}

/// For each shot count: selects examples, explains every alarmed holdout
/// sample through the backend (client errors become tallied failures), and
/// scores the outcomes. Deterministic with the mock backends.
pub fn run_shot_sweep(
    ctx: &SweepContext,
    backend: &dyn ChatBackend,
    shot_counts: &[usize],
) -> Result<Vec<SweepOutcome>, EvalError> {
    let mut eval: Vec<&Sample> = ctx
        .eval_attacked
        .iter()
        .filter(|s| s.label == Label::Attack)
        .collect();
    eval.sort_by_key(|s| s.id);
    eval.truncate(ctx.limit);

    let mut results = Vec::with_capacity(shot_counts.len());
    for &k in shot_counts {
        let shots = select_few_shots(ctx.shot_pool, k, ctx.shots_seed)?;

        let runs: Vec<SweepRun> = run_bounded(&eval, ctx.client.max_in_flight, |sample| {
            let truth = AttackTruth::from_sample(sample).expect("eval samples are attacked");
            let detection = predict(ctx.model, sample.features.as_slice())
                .expect("persisted features have 18 values");
            if detection.label != Label::Attack {
                return SweepRun::Skipped;
            }
            let outcome = match build_bundle_with_series(
                ctx.system,
                &shots,
                sample,
                &detection,
                ctx.client.token_budget,
                ctx.series_stride,
            )
            .and_then(|bundle| explain_with_repair(ctx.client, backend, &bundle))
            {
                Ok((report, requests)) => ExplanationOutcome {
                    sample_id: sample.id,
                    report: Some(report),
                    error: None,
                    requests,
                },
                Err(err) => ExplanationOutcome {
                    sample_id: sample.id,
                    report: None,
                    error: Some(err.to_string()),
                    requests: match err {
                        ExplainError::Parse { .. } => 2,
                        _ => 0,
                    },
                },
            };
            SweepRun::Attempted(Box::new(outcome), truth)
        });

        let mut outcomes = Vec::new();
        let mut truths = Vec::new();
        let mut n_skipped = 0usize;
        for run in runs {
            match run {
                SweepRun::Skipped => n_skipped += 1,
                SweepRun::Attempted(outcome, truth) => {
                    outcomes.push(*outcome);
                    truths.push(truth);
                }
            }
        }
        let metrics = score(&outcomes, &truths)?;
        results.push(SweepOutcome {
            shots: k,
            metrics,
            outcomes,
            truths,
            n_skipped_not_alarmed: n_skipped,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok_outcome(id: u64, target: SignalId, mag: f64, onset: f64) -> ExplanationOutcome {
        ExplanationOutcome {
            sample_id: id,
            report: Some(ExplanationReport {
                attack_target: target,
                attack_magnitude_pu: mag,
                attack_start_time_s: onset,
                justification: "test".into(),
                raw_response: "{}".into(),
                latency_s: 0.001,
            }),
            error: None,
            requests: 1,
        }
    }

    fn truth(id: u64, target: SignalId, mag: f64, onset: f64) -> AttackTruth {
        AttackTruth {
            sample_id: id,
            target,
            magnitude_pu: mag,
            t_start_s: onset,
        }
    }

    #[test]
    fn perfect_reports_score_perfectly() {
        let outcomes = vec![
            ok_outcome(1, SignalId::DeltaF1, 0.1, 10.0),
            ok_outcome(2, SignalId::DeltaPTie, 0.2, 20.0),
        ];
        let truths = vec![
            truth(1, SignalId::DeltaF1, 0.1, 10.0),
            truth(2, SignalId::DeltaPTie, 0.2, 20.0),
        ];
        let m = score(&outcomes, &truths).unwrap();
        assert_eq!(m.target_accuracy_pct, 100.0);
        assert_eq!(m.mae_magnitude_pu, 0.0);
        assert_eq!(m.mae_onset_s, 0.0);
        assert_eq!((m.n_evaluated, m.n_parse_failures), (2, 0));
    }

    #[test]
    fn onset_mae_averages_absolute_errors() {
        let outcomes = vec![
            ok_outcome(1, SignalId::DeltaF1, 0.1, 15.0),
            ok_outcome(2, SignalId::DeltaF1, 0.1, 20.0),
        ];
        let truths = vec![
            truth(1, SignalId::DeltaF1, 0.1, 15.0),
            truth(2, SignalId::DeltaF1, 0.1, 16.0),
        ];
        let m = score(&outcomes, &truths).unwrap();
        assert_eq!(m.mae_onset_s, 2.0);
    }

    #[test]
    fn parse_failures_are_excluded_from_maes() {
        let fail = ExplanationOutcome {
            sample_id: 2,
            report: None,
            error: Some("no balanced JSON object".into()),
            requests: 2,
        };
        let outcomes = vec![ok_outcome(1, SignalId::DeltaF2, 0.3, 5.0), fail];
        let truths = vec![
            truth(1, SignalId::DeltaF2, 0.3, 5.0),
            truth(2, SignalId::DeltaF1, 0.9, 25.0),
        ];
        let m = score(&outcomes, &truths).unwrap();
        assert_eq!((m.n_evaluated, m.n_parse_failures), (1, 1));
        assert_eq!(m.mae_magnitude_pu, 0.0);
        assert_eq!(m.target_accuracy_pct, 100.0);
    }

    #[test]
    fn misalignment_is_an_error() {
        let outcomes = vec![ok_outcome(5, SignalId::DeltaF1, 0.1, 1.0)];
        let truths = vec![truth(6, SignalId::DeltaF1, 0.1, 1.0)];
        assert!(matches!(
            score(&outcomes, &truths),
            Err(EvalError::Alignment { position: 0, .. })
        ));
        assert!(matches!(
            score(&outcomes, &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn scoring_is_permutation_invariant() {
        let mut outcomes = vec![
            ok_outcome(1, SignalId::DeltaF1, 0.10, 5.0),
            ok_outcome(2, SignalId::DeltaF2, 0.30, 9.0),
            ok_outcome(3, SignalId::DeltaPTie, 0.50, 22.0),
        ];
        let mut truths = vec![
            truth(1, SignalId::DeltaF1, 0.12, 6.0),
            truth(2, SignalId::DeltaF1, 0.30, 9.0),
            truth(3, SignalId::DeltaPTie, 0.55, 20.0),
        ];
        let a = score(&outcomes, &truths).unwrap();
        outcomes.reverse();
        truths.reverse();
        let b = score(&outcomes, &truths).unwrap();
        assert_eq!(a, b);
    }

    fn reference_detection_row() -> DetectionRow {
        DetectionRow {
            model: "reference".into(),
            metrics: ClassifierMetrics {
                accuracy: 0.9513,
                recall: 0.9160,
                precision: 0.9857,
                f1: 0.9496,
                mean_latency: 0.004,
            },
        }
    }

    #[test]
    fn markdown_row_formats_match_comparison_table() {
        let files = render_report(&[reference_detection_row()], &[], &RunMetadata::default());
        assert!(files
            .markdown
            .contains("| reference | 0.9513 | 0.9160 | 0.9857 | 0.9496 | 0.004 |"));
        assert!(!files.markdown.contains("Attack explanation"));
    }

    #[test]
    fn csv_round_trip_is_a_fixed_point() {
        let meta = RunMetadata(vec![
            ("dataset".into(), "data/corpus.jsonl".into()),
            ("note".into(), "value, with comma and \"quotes\"".into()),
        ]);
        let explanation = vec![ExplanationRow {
            model: "mock".into(),
            shots: 20,
            metrics: ExplanationMetrics {
                target_accuracy_pct: 93.0,
                mae_magnitude_pu: 0.07519,
                mae_onset_s: 2.19,
                mean_latency_s: 6.8704,
                n_evaluated: 100,
                n_parse_failures: 0,
            },
        }];
        let first = render_report(&[reference_detection_row()], &explanation, &meta);
        let (m2, d2, e2) = parse_report_csv(&first.csv).unwrap();
        let second = render_report(&d2, &e2, &m2);
        assert_eq!(first.csv, second.csv);
        assert_eq!(first.markdown, second.markdown);
        // Full-precision metric values survive the trip exactly.
        assert_eq!(d2[0].metrics.accuracy, 0.9513);
        assert_eq!(e2[0].metrics.mae_magnitude_pu, 0.07519);
        assert_eq!(m2.0[1].1, "value, with comma and \"quotes\"");
    }

    #[test]
    fn rows_sort_by_model_then_shots() {
        let make = |model: &str, shots| ExplanationRow {
            model: model.into(),
            shots,
            metrics: ExplanationMetrics {
                target_accuracy_pct: 0.0,
                mae_magnitude_pu: 0.0,
                mae_onset_s: 0.0,
                mean_latency_s: 0.0,
                n_evaluated: 0,
                n_parse_failures: 0,
            },
        };
        let rows = vec![make("b", 0), make("a", 5), make("a", 0)];
        let files = render_report(&[], &rows, &RunMetadata::default());
        let a0 = files.csv.find("a,0").unwrap();
        let a5 = files.csv.find("a,5").unwrap();
        let b0 = files.csv.find("b,0").unwrap();
        assert!(a0 < a5 && a5 < b0);
    }

    #[test]
    fn bounded_runner_preserves_order() {
        let items: Vec<u64> = (0..57).collect();
        let doubled = run_bounded(&items, 4, |x| x * 2);
        assert_eq!(doubled, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
