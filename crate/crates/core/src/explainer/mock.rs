//! Deterministic in-repo chat backend so the explanation path runs offline.
//!
//! Modes:
//! - `Echo`: answers with the gold explanation for the queried sample.
//! - `Fixed`: always returns one configured body.
//! - `Fault`: echoes the gold answer wrapped in prose or code fences, except
//!   for a seeded fraction of samples that get unparseable garbage (stable
//!   per sample, so the repair attempt fails too).
//! - `AlwaysHttp`: every call fails with the configured status.
//! - `FailTransportThenEcho`: the first N calls fail at the transport level,
//!   then echo behavior resumes.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use crate::explainer::client::{BackendError, ChatBackend, ChatRequest};
use crate::explainer::GoldAnswer;
use crate::rng::mix_seed;

#[derive(Debug, Clone)]
pub enum MockMode {
    Echo,
    Fixed(String),
    Fault { garbage_rate: f64, seed: u64 },
    AlwaysHttp { status: u16 },
    FailTransportThenEcho { failures: u32 },
}

pub struct MockBackend {
    mode: MockMode,
    truths: HashMap<u64, GoldAnswer>,
    requests: Mutex<HashMap<u64, u32>>,
    remaining_failures: AtomicU32,
}

impl MockBackend {
    pub fn new(mode: MockMode, truths: HashMap<u64, GoldAnswer>) -> Self {
        let remaining = match &mode {
            MockMode::FailTransportThenEcho { failures } => *failures,
            _ => 0,
        };
        MockBackend {
            mode,
            truths,
            requests: Mutex::new(HashMap::new()),
            remaining_failures: AtomicU32::new(remaining),
        }
    }

    pub fn echo(truths: HashMap<u64, GoldAnswer>) -> Self {
        Self::new(MockMode::Echo, truths)
    }

    pub fn fixed(body: impl Into<String>) -> Self {
        Self::new(MockMode::Fixed(body.into()), HashMap::new())
    }

    pub fn fault(truths: HashMap<u64, GoldAnswer>, garbage_rate: f64, seed: u64) -> Self {
        Self::new(MockMode::Fault { garbage_rate, seed }, truths)
    }

    pub fn always_http(status: u16) -> Self {
        Self::new(MockMode::AlwaysHttp { status }, HashMap::new())
    }

    pub fn fail_transport_then_echo(failures: u32, truths: HashMap<u64, GoldAnswer>) -> Self {
        Self::new(MockMode::FailTransportThenEcho { failures }, truths)
    }

    /// Requests seen for one sample id (repair re-requests included).
    pub fn requests_for(&self, sample_id: u64) -> u32 {
        *self
            .requests
            .lock()
            .expect("mock counter lock")
            .get(&sample_id)
            .unwrap_or(&0)
    }

    /// Whether the fault mode serves garbage for this sample. Stable per
    /// sample so repair attempts see the same behavior.
    pub fn is_garbage_sample(&self, sample_id: u64) -> bool {
        match &self.mode {
            MockMode::Fault { garbage_rate, seed } => {
                garbage_decision(*seed, sample_id, *garbage_rate)
            }
            _ => false,
        }
    }

    fn gold_body(&self, sample_id: u64) -> Result<String, BackendError> {
        let gold = self
            .truths
            .get(&sample_id)
            .ok_or_else(|| BackendError::Http {
                status: 404,
                body: format!("mock backend holds no ground truth for sample {sample_id}"),
            })?;
        Ok(serde_json::json!({
            "attack_target": gold.target.name(),
            "attack_magnitude_pu": gold.magnitude_pu,
            "attack_start_time_s": gold.t_start_s,
            "justification": format!(
                "Echo oracle: the {} statistics identify the injected bias directly.",
                gold.target.name()
            ),
        })
        .to_string())
    }
}

fn garbage_decision(seed: u64, sample_id: u64, rate: f64) -> bool {
    let h = mix_seed(seed, sample_id, 7);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64) < rate
}

/// Pulls the sample id out of the user message. Queries are JSON with a
/// top-level `sample_id`; repair requests append prose after the JSON, so
/// this scans for the key instead of parsing the whole text.
pub fn extract_sample_id(user_text: &str) -> Option<u64> {
    let key = "\"sample_id\":";
    let at = user_text.find(key)?;
    let rest = user_text[at + key.len()..].trim_start();
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let sample_id = extract_sample_id(request.user);
        if let Some(id) = sample_id {
            *self
                .requests
                .lock()
                .expect("mock counter lock")
                .entry(id)
                .or_insert(0) += 1;
        }

        match &self.mode {
            MockMode::Fixed(body) => Ok(body.clone()),
            MockMode::AlwaysHttp { status } => Err(BackendError::Http {
                status: *status,
                body: "mock backend is configured to fail".into(),
            }),
            MockMode::FailTransportThenEcho { .. } => {
                let before = self
                    .remaining_failures
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1))
                    .ok();
                if before.is_some() {
                    return Err(BackendError::Transport(
                        "mock transport failure (scripted)".into(),
                    ));
                }
                let id = sample_id.ok_or_else(|| BackendError::Http {
                    status: 400,
                    body: "user message carries no sample_id".into(),
                })?;
                self.gold_body(id)
            }
            MockMode::Echo => {
                let id = sample_id.ok_or_else(|| BackendError::Http {
                    status: 400,
                    body: "user message carries no sample_id".into(),
                })?;
                self.gold_body(id)
            }
            MockMode::Fault { garbage_rate, seed } => {
                let id = sample_id.ok_or_else(|| BackendError::Http {
                    status: 400,
                    body: "user message carries no sample_id".into(),
                })?;
                if garbage_decision(*seed, id, *garbage_rate) {
                    return Ok(format!(
                        "telemetry digest {id}: spectral residual nominal, awaiting {{ further \
                         operator input -- no structured verdict available"
                    ));
                }
                let body = self.gold_body(id)?;
                Ok(match mix_seed(*seed, id, 9) % 3 {
                    0 => body,
                    1 => format!(
                        "The classifier flagged this window; here is my assessment.\n\
                         ```json\n{body}\n```\nEnd of report."
                    ),
                    _ => format!(
                        "Looking at the window statistics, the evidence points one way. {body} \
                         Continued monitoring of the tie-line is advised."
                    ),
                })
            }
        }
    }

    fn name(&self) -> &str {
        match self.mode {
            MockMode::Echo => "mock-echo",
            MockMode::Fixed(_) => "mock-fixed",
            MockMode::Fault { .. } => "mock-fault",
            MockMode::AlwaysHttp { .. } => "mock-http-error",
            MockMode::FailTransportThenEcho { .. } => "mock-flaky",
        }
    }
}
