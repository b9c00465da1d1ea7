//! End-to-end checks of the command-line surface, driving the real binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_agc-fdia")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_lists_every_subcommand() {
    let out = Command::new(bin()).arg("--help").output().unwrap();
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "simulate", "gen", "train", "detect", "explain", "evaluate", "sweep", "plot",
    ] {
        assert!(text.contains(sub), "--help misses {sub}");
    }
}

#[test]
fn unknown_flags_fail_loudly() {
    let out = Command::new(bin())
        .args(["gen", "--does-not-exist"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--does-not-exist"), "stderr: {err}");

    let out = Command::new(bin()).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[seeds]\nmastre = 1\n").unwrap();
    let out = run_in(dir.path(), &["--config", "bad.toml", "gen", "--n", "2"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mastre"), "stderr: {err}");
}

#[test]
fn gen_is_deterministic_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(
        dir.path(),
        &[
            "gen",
            "--n",
            "20",
            "--seed",
            "11",
            "--out",
            "a.jsonl",
            "--workers",
            "1",
        ],
    ));
    assert_ok(&run_in(
        dir.path(),
        &[
            "gen",
            "--n",
            "20",
            "--seed",
            "11",
            "--out",
            "b.jsonl",
            "--workers",
            "3",
        ],
    ));
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a, b);

    assert_ok(&run_in(
        dir.path(),
        &["gen", "--n", "20", "--seed", "12", "--out", "c.jsonl"],
    ));
    let c = std::fs::read(dir.path().join("c.jsonl")).unwrap();
    assert_ne!(a, c, "different seeds must differ");
}

#[test]
fn simulate_equilibrium_writes_zero_trace() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(
        dir.path(),
        &[
            "simulate",
            "--out",
            "tr.json",
            "--svg",
            "tr.svg",
            "--disturbance-magnitude",
            "0",
            "--no-noise",
        ],
    ));
    let text = std::fs::read_to_string(dir.path().join("tr.json")).unwrap();
    let trace: serde_json::Value = serde_json::from_str(&text).unwrap();
    let df1 = trace["delta_f1_pu"].as_array().unwrap();
    assert_eq!(df1.len(), 200);
    assert!(df1.iter().all(|v| v.as_f64() == Some(0.0)));
    assert!(dir.path().join("tr.svg").exists());
}

/// Full pipeline through the binary on a small corpus: gen, train, detect,
/// explain with the echo oracle, evaluate, sweep, plot.
#[test]
fn pipeline_echo_roundtrip_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&run_in(
        d,
        &["gen", "--n", "500", "--seed", "21", "--out", "ds.jsonl"],
    ));
    assert_ok(&run_in(
        d,
        &[
            "train",
            "--dataset",
            "ds.jsonl",
            "--model-out",
            "model.json",
            "--metrics-out",
            "metrics.json",
            "--n-trees",
            "60",
        ],
    ));
    assert_ok(&run_in(
        d,
        &[
            "detect",
            "--dataset",
            "ds.jsonl",
            "--model",
            "model.json",
            "--out",
            "det.jsonl",
        ],
    ));
    let detect_lines = std::fs::read_to_string(d.join("det.jsonl")).unwrap();
    assert_eq!(detect_lines.lines().count(), 500);

    let out = run_in(
        d,
        &[
            "explain",
            "--dataset",
            "ds.jsonl",
            "--model",
            "model.json",
            "--backend",
            "mock-echo",
            "--shots",
            "5",
            "--limit",
            "20",
            "--out",
            "exp.jsonl",
        ],
    );
    assert_ok(&out);
    let out = run_in(
        d,
        &[
            "evaluate",
            "--dataset",
            "ds.jsonl",
            "--reports",
            "exp.jsonl",
            "--report-dir",
            "rpt",
            "--classifier-metrics",
            "metrics.json",
        ],
    );
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("target accuracy 100.00%"),
        "evaluate output: {text}"
    );
    let csv = std::fs::read_to_string(d.join("rpt/report.csv")).unwrap();
    assert!(csv.contains("mock-echo,5,100,0,0,"));
    assert!(csv.contains("gradient_boosted,"));
    let md = std::fs::read_to_string(d.join("rpt/report.md")).unwrap();
    assert!(md.contains("## Attack detection"));
    assert!(md.contains("## Attack explanation"));

    // Plot an attacked holdout sample with its twin overlay.
    assert_ok(&run_in(
        d,
        &[
            "plot",
            "--dataset",
            "ds.jsonl",
            "--sample",
            "300",
            "--out",
            "p.svg",
        ],
    ));
    let svg = std::fs::read_to_string(d.join("p.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray"), "onset marker missing");
}

#[test]
fn sweep_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&run_in(
        d,
        &["gen", "--n", "440", "--seed", "31", "--out", "ds.jsonl"],
    ));
    assert_ok(&run_in(
        d,
        &[
            "train",
            "--dataset",
            "ds.jsonl",
            "--model-out",
            "model.json",
            "--n-trees",
            "40",
        ],
    ));
    let sweep_args = |rpt: &str| {
        vec![
            "sweep".to_string(),
            "--dataset".into(),
            "ds.jsonl".into(),
            "--model".into(),
            "model.json".into(),
            "--backend".into(),
            "mock-fault".into(),
            "--shots".into(),
            "0,5".into(),
            "--limit".into(),
            "15".into(),
            "--report-dir".into(),
            rpt.to_string(),
        ]
    };
    for rpt in ["r1", "r2"] {
        let args: Vec<String> = sweep_args(rpt);
        let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_ok(&run_in(d, &arg_refs));
    }
    let a = std::fs::read(d.join("r1/report.csv")).unwrap();
    let b = std::fs::read(d.join("r2/report.csv")).unwrap();
    assert_eq!(a, b, "seeded sweep reports must be byte-identical");
    let a_md = std::fs::read(d.join("r1/report.md")).unwrap();
    let b_md = std::fs::read(d.join("r2/report.md")).unwrap();
    assert_eq!(a_md, b_md);
}

#[test]
fn detect_single_sample_prints_result() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&run_in(
        d,
        &["gen", "--n", "420", "--seed", "41", "--out", "ds.jsonl"],
    ));
    assert_ok(&run_in(
        d,
        &[
            "train",
            "--dataset",
            "ds.jsonl",
            "--model-out",
            "model.json",
            "--n-trees",
            "30",
        ],
    ));
    let out = run_in(
        d,
        &[
            "detect",
            "--dataset",
            "ds.jsonl",
            "--model",
            "model.json",
            "--sample",
            "210",
        ],
    );
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"sample_id\": 210"));
    assert!(text.contains("prob_attack"));

    let missing = run_in(
        d,
        &[
            "detect",
            "--dataset",
            "ds.jsonl",
            "--model",
            "model.json",
            "--sample",
            "9999",
        ],
    );
    assert!(!missing.status.success());
}

#[test]
fn config_file_values_are_used_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "[paths]\ndataset = \"from_config.jsonl\"\n\n[seeds]\nmaster = 77\n",
    )
    .unwrap();
    assert_ok(&run_in(d, &["--config", "run.toml", "gen", "--n", "10"]));
    assert!(d.join("from_config.jsonl").exists());

    assert_ok(&run_in(
        d,
        &[
            "--config",
            "run.toml",
            "gen",
            "--n",
            "10",
            "--out",
            "flag_wins.jsonl",
        ],
    ));
    assert!(d.join("flag_wins.jsonl").exists());

    // Same master seed from config vs explicit flag: identical bytes.
    assert_ok(&run_in(
        d,
        &[
            "gen",
            "--n",
            "10",
            "--seed",
            "77",
            "--out",
            "explicit.jsonl",
        ],
    ));
    let a = std::fs::read(d.join("from_config.jsonl")).unwrap();
    let b = std::fs::read(d.join("explicit.jsonl")).unwrap();
    assert_eq!(a, b);
}

/// Minimal loopback chat endpoint: answers every request with the same
/// parseable explanation object.
fn spawn_canned_llm_server(n_requests: usize) -> String {
    use std::io::{Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let content = "{\\\"attack_target\\\": \\\"delta_p_tie\\\", \\\"attack_magnitude_pu\\\": 0.1, \\\"attack_start_time_s\\\": 12.0, \\\"justification\\\": \\\"canned\\\"}";
        let body = format!("{{\"choices\": [{{\"message\": {{\"content\": \"{content}\"}}}}]}}");
        for _ in 0..n_requests {
            let Ok((mut stream, _)) = listener.accept() else {
                return;
            };
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            let mut headers_end = None;
            while headers_end.is_none() {
                let n = stream.read(&mut chunk).unwrap_or(0);
                if n == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..n]);
                headers_end = buf.windows(4).position(|w| w == b"\r\n\r\n");
            }
            let Some(pos) = headers_end else { continue };
            let header_text = String::from_utf8_lossy(&buf[..pos]).to_string();
            let content_length = header_text
                .lines()
                .find_map(|l| {
                    let (name, value) = l.split_once(':')?;
                    name.eq_ignore_ascii_case("content-length")
                        .then(|| value.trim().parse::<usize>().ok())?
                })
                .unwrap_or(0);
            while buf.len() < pos + 4 + content_length {
                let n = stream.read(&mut chunk).unwrap_or(0);
                if n == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..n]);
            }
            let reply = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\n\
                 content-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).ok();
        }
    });
    format!("http://{addr}")
}

#[test]
fn live_backend_round_trips_through_a_loopback_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&run_in(
        d,
        &["gen", "--n", "420", "--seed", "71", "--out", "ds.jsonl"],
    ));
    assert_ok(&run_in(
        d,
        &[
            "train",
            "--dataset",
            "ds.jsonl",
            "--model-out",
            "model.json",
            "--n-trees",
            "30",
        ],
    ));
    let base_url = spawn_canned_llm_server(4);
    let out = Command::new(bin())
        .current_dir(d)
        .env("AGC_LLM_API_KEY", "loopback-test-key")
        .args([
            "explain",
            "--dataset",
            "ds.jsonl",
            "--model",
            "model.json",
            "--backend",
            "live",
            "--base-url",
            &base_url,
            "--model-name",
            "canned",
            "--shots",
            "0",
            "--limit",
            "2",
            "--out",
            "live.jsonl",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(d.join("live.jsonl")).unwrap();
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["model"], "canned");
    let outcomes: Vec<serde_json::Value> =
        lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(outcomes.len(), 2);
    for outcome in &outcomes {
        assert_eq!(outcome["report"]["attack_target"], "delta_p_tie");
        assert_eq!(outcome["report"]["attack_magnitude_pu"], 0.1);
        assert!(outcome["error"].is_null());
    }
}

#[test]
fn live_backend_without_credential_fails_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&run_in(
        d,
        &["gen", "--n", "420", "--seed", "51", "--out", "ds.jsonl"],
    ));
    assert_ok(&run_in(
        d,
        &[
            "train",
            "--dataset",
            "ds.jsonl",
            "--model-out",
            "model.json",
            "--n-trees",
            "20",
        ],
    ));
    let out = Command::new(bin())
        .current_dir(d)
        .env_remove("AGC_LLM_API_KEY")
        .args([
            "explain",
            "--dataset",
            "ds.jsonl",
            "--model",
            "model.json",
            "--backend",
            "live",
            "--limit",
            "1",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("AGC_LLM_API_KEY"), "stderr: {err}");
}

#[test]
fn plot_frozen_reference_sample_marks_onset_at_15s() {
    // Wrap the frozen reference sample in a one-line dataset and plot it:
    // the overlay must carry the onset marker at t = 15 s.
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sample = agc_fdia::datagen::generate_golden_sample().unwrap();
    let header = serde_json::json!({
        "format": "agc-fdia-dataset",
        "version": 1,
        "n_samples": 1,
        "master_seed": 0,
        "seed_mix": "hand-assembled reference set",
        "layout": "single attacked sample",
        "window_s": 60.0,
        "record_dt_s": 0.3,
        "internal_dt_s": 0.01,
    });
    let content = format!("{}\n{}\n", header, serde_json::to_string(&sample).unwrap());
    std::fs::write(d.join("golden.jsonl"), content).unwrap();
    assert_ok(&run_in(
        d,
        &[
            "plot",
            "--dataset",
            "golden.jsonl",
            "--sample",
            "0",
            "--out",
            "golden.svg",
        ],
    ));
    let svg = std::fs::read_to_string(d.join("golden.svg")).unwrap();
    assert!(svg.contains("onset 15 s"), "marker label missing");
    assert!(svg.contains("delta_p_tie (pu)"));
    assert!(svg.contains("magnitude 0.2138 pu"));
}

#[test]
fn plot_golden_style_sample_marks_onset() {
    // Build a tiny dataset whose attacked half includes onset markers, then
    // check the overlay encodes the onset of the chosen sample.
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&run_in(
        d,
        &["gen", "--n", "8", "--seed", "61", "--out", "ds.jsonl"],
    ));
    let text = std::fs::read_to_string(d.join("ds.jsonl")).unwrap();
    let attacked: serde_json::Value = text
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|v| v["label"] == "attack")
        .unwrap();
    let id = attacked["id"].as_u64().unwrap().to_string();
    assert_ok(&run_in(
        d,
        &[
            "plot",
            "--dataset",
            "ds.jsonl",
            "--sample",
            &id,
            "--out",
            "g.svg",
            "--csv",
            "g.csv",
        ],
    ));
    let svg = std::fs::read_to_string(d.join("g.svg")).unwrap();
    assert!(svg.contains("onset"));
    let csv = std::fs::read_to_string(d.join("g.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("baseline_delta_f1_pu"));
    assert_eq!(csv.lines().count(), 201);
}
