//! Subcommand implementations on top of the library crate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use agc_fdia::datagen::{self, generate_dataset, read_dataset, split_dataset, Label, Sample};
use agc_fdia::detector::{
    self, evaluate_classifier, load_model, predict, save_model, train_gbdt, train_rf,
    ClassifierMetrics, ForestHyperParams, GbdtHyperParams, TrainingSet,
};
use agc_fdia::evaluator::{
    parse_report_csv, render_report, run_shot_sweep, score, AttackTruth, DetectionRow, EvalError,
    ExplanationOutcome, ExplanationRow, ReportFiles, RunMetadata, SweepContext,
};
use agc_fdia::explainer::{
    build_shot_pool, ChatBackend, GoldAnswer, HttpBackend, LlmClientConfig, MockBackend,
    RetryPolicy,
};
use agc_fdia::plant::{self, DisturbanceSpec, IdentityHook, ScenarioConfig};
use agc_fdia::plot::{render_trace_svg, trace_csv, TraceOverlay};
use agc_fdia::rng::{mix_seed, Rng};

use crate::config::{DetectorKind, RunConfig};
use crate::{
    BackendArg, DetectArgs, EvaluateArgs, ExplainArgs, GenArgs, PlotArgs, SimulateArgs, SweepArgs,
    TrainArgs,
};

pub fn simulate(_config: &RunConfig, args: SimulateArgs) -> Result<()> {
    let mut scenario = ScenarioConfig::new(
        DisturbanceSpec {
            area: args.disturbance_area,
            magnitude: args.disturbance_magnitude,
            start_time: args.disturbance_start,
        },
        args.seed,
    );
    scenario.window = args.window;
    if args.linear {
        scenario.system.nonlinear_mode = false;
    }
    if let Some(ki) = args.ki {
        scenario.system.area1.agc_gain_ki = ki;
        scenario.system.area2.agc_gain_ki = ki;
    }
    if args.no_noise {
        scenario = scenario.with_noise_disabled();
    }

    let trace = plant::simulate(&scenario, &IdentityHook)?;
    let record = datagen::TraceRecord::from(&trace);
    write_text(&args.out, &format!("{}\n", serde_json::to_string(&record)?))?;
    println!(
        "simulated {} points over {} s -> {}",
        record.len(),
        scenario.window,
        args.out.display()
    );
    if let Some(svg_path) = &args.svg {
        let svg = render_trace_svg(&TraceOverlay {
            trace: &record,
            baseline: None,
            onset_s: None,
            title: &format!("scenario seed {}", args.seed),
        });
        write_text(svg_path, &svg)?;
        println!("wrote {}", svg_path.display());
    }
    if let Some(csv_path) = &args.csv {
        write_text(csv_path, &trace_csv(&record, None))?;
        println!("wrote {}", csv_path.display());
    }
    Ok(())
}

pub fn generate(config: &RunConfig, args: GenArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(config.seeds.master);
    let out = args.out.unwrap_or_else(|| config.paths.dataset.clone());
    let workers = args.workers.unwrap_or_else(default_workers);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let started = std::time::Instant::now();
    let header = generate_dataset(args.n, seed, &out, workers)?;
    println!(
        "wrote {} samples (seed {}) to {} in {:.1} s",
        header.n_samples,
        header.master_seed,
        out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[derive(Serialize, Deserialize)]
pub struct SavedClassifierMetrics {
    pub model: String,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub mean_latency_s: f64,
}

impl SavedClassifierMetrics {
    fn new(model: String, m: &ClassifierMetrics) -> Self {
        SavedClassifierMetrics {
            model,
            accuracy: m.accuracy,
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
            mean_latency_s: m.mean_latency,
        }
    }

    fn to_row(&self) -> DetectionRow {
        DetectionRow {
            model: self.model.clone(),
            metrics: ClassifierMetrics {
                accuracy: self.accuracy,
                recall: self.recall,
                precision: self.precision,
                f1: self.f1,
                mean_latency: self.mean_latency_s,
            },
        }
    }
}

pub fn train(config: &RunConfig, args: TrainArgs) -> Result<()> {
    let dataset_path = args.dataset.unwrap_or_else(|| config.paths.dataset.clone());
    let model_out = args.model_out.unwrap_or_else(|| config.paths.model.clone());
    let split_seed = args.split_seed.unwrap_or(config.seeds.split);
    let train_seed = args.train_seed.unwrap_or(config.seeds.train);
    let kind: DetectorKind = args.kind.map(Into::into).unwrap_or(config.detector.kind);

    let (_, samples) = read_dataset(&dataset_path)?;
    let split = split_dataset(samples, split_seed)?;
    println!(
        "split: {} train / {} test / {} llm-eval",
        split.train.len(),
        split.test.len(),
        split.llm_eval.len()
    );
    let train_set = TrainingSet::from_samples(&split.train);
    let test_set = TrainingSet::from_samples(&split.test);

    let model = match kind {
        DetectorKind::Gbdt => {
            let mut hp = GbdtHyperParams {
                n_trees: args.n_trees.or(config.detector.n_trees).unwrap_or(200),
                max_depth: args.max_depth.or(config.detector.max_depth).unwrap_or(4),
                learning_rate: config.detector.learning_rate.unwrap_or(0.1),
                subsample: config.detector.subsample.unwrap_or(0.8),
                min_samples_leaf: config.detector.min_samples_leaf.unwrap_or(5),
            };
            if args.tune_trials > 0 {
                let tune_seed = args.tune_seed.unwrap_or(config.seeds.tuning);
                let (fit_part, valid_part) = tuning_split(&train_set, tune_seed);
                let outcome = detector::tune_random_search(
                    &fit_part,
                    &valid_part,
                    args.tune_trials,
                    tune_seed,
                )?;
                println!(
                    "random search over {} trials: best validation F1 {:.4} with {:?}",
                    args.tune_trials, outcome.best_f1, outcome.best
                );
                hp = outcome.best;
            }
            train_gbdt(&train_set, &hp, train_seed)?
        }
        DetectorKind::RandomForest => {
            let hp = ForestHyperParams {
                n_trees: args.n_trees.or(config.detector.n_trees).unwrap_or(200),
                max_depth: Some(args.max_depth.or(config.detector.max_depth).unwrap_or(12)),
                max_features: config.detector.max_features.unwrap_or(4),
                min_samples_leaf: config.detector.min_samples_leaf.unwrap_or(1),
                bootstrap: config.detector.bootstrap.unwrap_or(true),
            };
            train_rf(&train_set, &hp, train_seed)?
        }
    };

    let metrics = evaluate_classifier(&model, &test_set);
    println!(
        "test metrics: accuracy {:.4}, recall {:.4}, precision {:.4}, F1 {:.4}, \
         mean latency {:.6} s",
        metrics.accuracy, metrics.recall, metrics.precision, metrics.f1, metrics.mean_latency
    );

    if let Some(parent) = model_out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_model(&model, &model_out)?;
    println!(
        "saved {} model to {}",
        model.kind.name(),
        model_out.display()
    );

    if let Some(metrics_path) = &args.metrics_out {
        let saved = SavedClassifierMetrics::new(model.kind.name().to_string(), &metrics);
        write_text(
            metrics_path,
            &format!("{}\n", serde_json::to_string(&saved)?),
        )?;
        println!("wrote metrics to {}", metrics_path.display());
    }
    Ok(())
}

/// Seeded 80/20 split of the training set for hyperparameter search.
fn tuning_split(set: &TrainingSet, seed: u64) -> (TrainingSet, TrainingSet) {
    let mut indices: Vec<usize> = (0..set.len()).collect();
    let mut rng = Rng::seed_from_u64(mix_seed(seed, 0, 10));
    rng.shuffle(&mut indices);
    let n_fit = set.len() * 8 / 10;
    let pick = |idx: &[usize]| TrainingSet {
        features: idx.iter().map(|&i| set.features[i]).collect(),
        labels: idx.iter().map(|&i| set.labels[i]).collect(),
    };
    (pick(&indices[..n_fit]), pick(&indices[n_fit..]))
}

pub fn detect(config: &RunConfig, args: DetectArgs) -> Result<()> {
    let dataset_path = args.dataset.unwrap_or_else(|| config.paths.dataset.clone());
    let model_path = args.model.unwrap_or_else(|| config.paths.model.clone());
    let model = load_model(&model_path)?;
    let (_, samples) = read_dataset(&dataset_path)?;

    let targets: Vec<&Sample> = match args.sample {
        Some(id) => vec![samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| anyhow!("sample {id} not found in {}", dataset_path.display()))?],
        None => samples.iter().collect(),
    };

    #[derive(Serialize)]
    struct DetectLine {
        sample_id: u64,
        truth: Label,
        predicted: Label,
        confidence: f64,
        prob_normal: f64,
        prob_attack: f64,
        inference_latency_s: f64,
    }

    let mut writer: Option<BufWriter<File>> = match &args.out {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut tn = 0u64;
    let mut fn_ = 0u64;
    let mut latency_total = 0.0;
    for sample in &targets {
        let result = predict(&model, sample.features.as_slice())?;
        latency_total += result.inference_latency;
        match (result.label == Label::Attack, sample.label == Label::Attack) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
        let line = DetectLine {
            sample_id: sample.id,
            truth: sample.label,
            predicted: result.label,
            confidence: result.confidence,
            prob_normal: result.prob_normal,
            prob_attack: result.prob_attack,
            inference_latency_s: result.inference_latency,
        };
        if let Some(w) = writer.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        } else if args.sample.is_some() {
            println!("{}", serde_json::to_string_pretty(&line)?);
        }
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    if args.sample.is_none() {
        let metrics = detector::metrics_from_counts(
            tp,
            fp,
            tn,
            fn_,
            latency_total / targets.len().max(1) as f64,
        );
        println!(
            "scored {} samples: accuracy {:.4}, recall {:.4}, precision {:.4}, F1 {:.4}",
            targets.len(),
            metrics.accuracy,
            metrics.recall,
            metrics.precision,
            metrics.f1
        );
    }
    Ok(())
}

fn truths_by_id(samples: &[Sample]) -> HashMap<u64, GoldAnswer> {
    samples
        .iter()
        .filter_map(|s| {
            s.attack.as_ref().map(|spec| {
                (
                    s.id,
                    GoldAnswer {
                        target: spec.target,
                        magnitude_pu: spec.magnitude,
                        t_start_s: spec.t_start,
                    },
                )
            })
        })
        .collect()
}

fn client_config(
    config: &RunConfig,
    base_url: Option<String>,
    model_name: Option<String>,
) -> LlmClientConfig {
    LlmClientConfig {
        base_url: base_url.unwrap_or_else(|| config.explainer.base_url.clone()),
        model_name: model_name.unwrap_or_else(|| config.explainer.model_name.clone()),
        temperature: 0.0,
        request_seed: config.explainer.request_seed,
        max_in_flight: config.explainer.max_in_flight,
        retry: RetryPolicy {
            max_attempts: config.explainer.retry_max_attempts,
            base_delay_ms: config.explainer.retry_base_delay_ms,
        },
        token_budget: config.explainer.token_budget,
    }
}

fn make_backend(
    backend: BackendArg,
    config: &RunConfig,
    client: &LlmClientConfig,
    eval_truths: HashMap<u64, GoldAnswer>,
    fault_rate: Option<f64>,
    fault_seed: Option<u64>,
) -> Result<Box<dyn ChatBackend>> {
    Ok(match backend {
        BackendArg::MockEcho => Box::new(MockBackend::echo(eval_truths)),
        BackendArg::MockFault => Box::new(MockBackend::fault(
            eval_truths,
            fault_rate.unwrap_or(config.explainer.fault_rate),
            fault_seed.unwrap_or(config.explainer.fault_seed),
        )),
        BackendArg::Live => Box::new(HttpBackend::from_env(&client.base_url)?),
    })
}

fn backend_label(backend: BackendArg, client: &LlmClientConfig) -> String {
    match backend {
        BackendArg::MockEcho => "mock-echo".into(),
        BackendArg::MockFault => "mock-fault".into(),
        BackendArg::Live => client.model_name.clone(),
    }
}

/// First line of an explanation outcomes file.
#[derive(Serialize, Deserialize)]
pub struct ExplanationRunHeader {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub backend: String,
    pub shots: usize,
    pub split_seed: u64,
    pub shots_seed: u64,
    pub n_attempted: usize,
    pub n_skipped_not_alarmed: usize,
}

pub fn explain(config: &RunConfig, args: ExplainArgs) -> Result<()> {
    let dataset_path = args.dataset.unwrap_or_else(|| config.paths.dataset.clone());
    let model_path = args.model.unwrap_or_else(|| config.paths.model.clone());
    let split_seed = args.split_seed.unwrap_or(config.seeds.split);
    let shots_seed = args.shots_seed.unwrap_or(config.seeds.shots);
    let limit = args.limit.unwrap_or(config.explainer.eval_limit);
    let out = args
        .out
        .unwrap_or_else(|| config.paths.reports_dir.join("explanations.jsonl"));

    let model = load_model(&model_path)?;
    let (_, samples) = read_dataset(&dataset_path)?;
    let system = samples
        .first()
        .map(|s| s.scenario.system)
        .unwrap_or_else(agc_fdia::plant::SystemParams::standard);
    let split = split_dataset(samples, split_seed)?;
    let client = client_config(config, args.base_url, args.model_name);
    let backend = make_backend(
        args.backend,
        config,
        &client,
        truths_by_id(&split.llm_eval),
        args.fault_rate,
        args.fault_seed,
    )?;
    let pool = build_shot_pool(&model, &split.train);
    let eval_attacked: Vec<Sample> = split
        .llm_eval
        .iter()
        .filter(|s| s.label == Label::Attack)
        .cloned()
        .collect();

    let ctx = SweepContext {
        model: &model,
        system: &system,
        eval_attacked: &eval_attacked,
        shot_pool: &pool,
        client: &client,
        shots_seed,
        limit,
        series_stride: args.series_stride,
    };
    let mut outcomes =
        run_shot_sweep(&ctx, backend.as_ref(), &[args.shots]).map_err(|e| anyhow!("{e}"))?;
    let sweep = outcomes.remove(0);

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut writer = BufWriter::new(File::create(&out)?);
    let header = ExplanationRunHeader {
        format: "agc-fdia-explanations".into(),
        version: 1,
        model: backend_label(args.backend, &client),
        backend: backend.name().to_string(),
        shots: args.shots,
        split_seed,
        shots_seed,
        n_attempted: sweep.outcomes.len(),
        n_skipped_not_alarmed: sweep.n_skipped_not_alarmed,
    };
    writeln!(writer, "{}", serde_json::to_string(&header)?)?;
    for outcome in &sweep.outcomes {
        writeln!(writer, "{}", serde_json::to_string(outcome)?)?;
    }
    writer.flush()?;
    println!(
        "explained {} samples ({} parse failures, {} skipped without alarm) -> {}",
        sweep.outcomes.len(),
        sweep.metrics.n_parse_failures,
        sweep.n_skipped_not_alarmed,
        out.display()
    );
    println!(
        "target accuracy {:.2}%, MAE magnitude {:.5} pu, MAE onset {:.2} s",
        sweep.metrics.target_accuracy_pct,
        sweep.metrics.mae_magnitude_pu,
        sweep.metrics.mae_onset_s
    );
    Ok(())
}

fn read_outcomes(path: &Path) -> Result<(ExplanationRunHeader, Vec<ExplanationOutcome>)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| anyhow!("empty explanations file"))??;
    let header: ExplanationRunHeader =
        serde_json::from_str(&header_line).context("parsing explanations header")?;
    let mut outcomes = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        outcomes.push(serde_json::from_str(&line).context("parsing explanation outcome")?);
    }
    Ok((header, outcomes))
}

fn load_detection_rows(path: Option<&Path>) -> Result<Vec<DetectionRow>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let saved: SavedClassifierMetrics = serde_json::from_str(text.trim())?;
            Ok(vec![saved.to_row()])
        }
    }
}

fn write_report_files(dir: &Path, files: &ReportFiles) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_text(&dir.join("report.md"), &files.markdown)?;
    write_text(&dir.join("report.csv"), &files.csv)?;
    println!("wrote {} and report.csv", dir.join("report.md").display());
    Ok(())
}

pub fn evaluate(config: &RunConfig, args: EvaluateArgs) -> Result<()> {
    let dataset_path = args.dataset.unwrap_or_else(|| config.paths.dataset.clone());
    let report_dir = args
        .report_dir
        .unwrap_or_else(|| config.paths.reports_dir.clone());
    let (header, outcomes) = read_outcomes(&args.reports)?;
    let (_, samples) = read_dataset(&dataset_path)?;
    let truth_map: HashMap<u64, AttackTruth> = samples
        .iter()
        .filter_map(AttackTruth::from_sample)
        .map(|t| (t.sample_id, t))
        .collect();
    let truths: Vec<AttackTruth> = outcomes
        .iter()
        .map(|o| {
            truth_map
                .get(&o.sample_id)
                .copied()
                .ok_or_else(|| anyhow!("no attacked sample {} in the dataset", o.sample_id))
        })
        .collect::<Result<_>>()?;
    let metrics = score(&outcomes, &truths).map_err(|e: EvalError| anyhow!("{e}"))?;

    let detection = load_detection_rows(args.classifier_metrics.as_deref())?;
    let explanation = vec![ExplanationRow {
        model: header.model.clone(),
        shots: header.shots,
        metrics,
    }];
    let meta = RunMetadata(vec![
        ("dataset".into(), dataset_path.display().to_string()),
        ("backend".into(), header.backend.clone()),
        ("shots".into(), header.shots.to_string()),
        ("split_seed".into(), header.split_seed.to_string()),
        ("shots_seed".into(), header.shots_seed.to_string()),
        (
            "skipped_not_alarmed".into(),
            header.n_skipped_not_alarmed.to_string(),
        ),
    ]);
    let files = render_report(&detection, &explanation, &meta);
    write_report_files(&report_dir, &files)?;
    println!(
        "target accuracy {:.2}%, MAE magnitude {:.5} pu, MAE onset {:.2} s \
         ({} evaluated, {} parse failures)",
        metrics.target_accuracy_pct,
        metrics.mae_magnitude_pu,
        metrics.mae_onset_s,
        metrics.n_evaluated,
        metrics.n_parse_failures
    );
    Ok(())
}

pub fn sweep(config: &RunConfig, args: SweepArgs) -> Result<()> {
    let dataset_path = args.dataset.unwrap_or_else(|| config.paths.dataset.clone());
    let model_path = args.model.unwrap_or_else(|| config.paths.model.clone());
    let split_seed = args.split_seed.unwrap_or(config.seeds.split);
    let shots_seed = args.shots_seed.unwrap_or(config.seeds.shots);
    let limit = args.limit.unwrap_or(config.explainer.eval_limit);
    let shot_counts = args
        .shots
        .unwrap_or_else(|| config.explainer.shot_counts.clone());
    let report_dir = args
        .report_dir
        .unwrap_or_else(|| config.paths.reports_dir.clone());

    let model = load_model(&model_path)?;
    let (_, samples) = read_dataset(&dataset_path)?;
    let system = samples
        .first()
        .map(|s| s.scenario.system)
        .unwrap_or_else(agc_fdia::plant::SystemParams::standard);
    let split = split_dataset(samples, split_seed)?;
    let client = client_config(config, args.base_url, args.model_name);
    let backend = make_backend(
        args.backend,
        config,
        &client,
        truths_by_id(&split.llm_eval),
        args.fault_rate,
        args.fault_seed,
    )?;
    let pool = build_shot_pool(&model, &split.train);
    let eval_attacked: Vec<Sample> = split
        .llm_eval
        .iter()
        .filter(|s| s.label == Label::Attack)
        .cloned()
        .collect();

    let ctx = SweepContext {
        model: &model,
        system: &system,
        eval_attacked: &eval_attacked,
        shot_pool: &pool,
        client: &client,
        shots_seed,
        limit,
        series_stride: args.series_stride,
    };
    let sweeps =
        run_shot_sweep(&ctx, backend.as_ref(), &shot_counts).map_err(|e| anyhow!("{e}"))?;

    let label = backend_label(args.backend, &client);
    let explanation: Vec<ExplanationRow> = sweeps
        .iter()
        .map(|s| ExplanationRow {
            model: label.clone(),
            shots: s.shots,
            metrics: s.metrics,
        })
        .collect();
    for row in &explanation {
        println!(
            "shots {:>3}: target accuracy {:.2}%, MAE magnitude {:.5} pu, MAE onset {:.2} s, \
             {} evaluated, {} failures",
            row.shots,
            row.metrics.target_accuracy_pct,
            row.metrics.mae_magnitude_pu,
            row.metrics.mae_onset_s,
            row.metrics.n_evaluated,
            row.metrics.n_parse_failures
        );
    }
    let detection = load_detection_rows(args.classifier_metrics.as_deref())?;
    let meta = RunMetadata(vec![
        ("dataset".into(), dataset_path.display().to_string()),
        ("backend".into(), backend.name().to_string()),
        (
            "shot_counts".into(),
            shot_counts
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        ),
        ("limit".into(), limit.to_string()),
        ("split_seed".into(), split_seed.to_string()),
        ("shots_seed".into(), shots_seed.to_string()),
    ]);
    let files = render_report(&detection, &explanation, &meta);
    write_report_files(&report_dir, &files)?;
    // The emitted CSV must parse back to the same report.
    let reparsed = parse_report_csv(&files.csv).map_err(|e| anyhow!("{e}"))?;
    let again = render_report(&reparsed.1, &reparsed.2, &reparsed.0);
    if again.csv != files.csv {
        bail!("report round-trip drifted; this is a bug");
    }
    Ok(())
}

pub fn plot(config: &RunConfig, args: PlotArgs) -> Result<()> {
    let dataset_path = args.dataset.unwrap_or_else(|| config.paths.dataset.clone());
    let (_, samples) = read_dataset(&dataset_path)?;
    let sample = samples
        .iter()
        .find(|s| s.id == args.sample)
        .ok_or_else(|| {
            anyhow!(
                "sample {} not found in {}",
                args.sample,
                dataset_path.display()
            )
        })?;

    // For attacked samples, recompute the attack-free twin from the stored
    // scenario; same seed, so noise lines up exactly.
    let baseline = match &sample.attack {
        Some(_) => {
            let trace = plant::simulate(&sample.scenario, &IdentityHook)?;
            Some(datagen::TraceRecord::from(&trace))
        }
        None => None,
    };
    let onset = sample.attack.as_ref().map(|spec| spec.t_start);
    let title = match &sample.attack {
        Some(spec) => format!(
            "sample {}: {} bias, magnitude {} pu, onset {} s",
            sample.id,
            spec.target.name(),
            spec.magnitude,
            spec.t_start
        ),
        None => format!("sample {}: normal operation", sample.id),
    };
    let svg = render_trace_svg(&TraceOverlay {
        trace: &sample.trace,
        baseline: baseline.as_ref(),
        onset_s: onset,
        title: &title,
    });
    write_text(&args.out, &svg)?;
    println!("wrote {}", args.out.display());
    if let Some(csv_path) = &args.csv {
        write_text(csv_path, &trace_csv(&sample.trace, baseline.as_ref()))?;
        println!("wrote {}", csv_path.display());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
