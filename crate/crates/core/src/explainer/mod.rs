//! LLM-backed explanation of detected attacks.
//!
//! [`prompt`] builds the system prompt (analyst role, plant background,
//! feature glossary, output schema, few-shot examples) and the per-sample
//! query, which deliberately carries no ground-truth attack fields.
//! [`client`] talks to any OpenAI-compatible chat-completions endpoint with
//! bounded retries; [`mock`] is a deterministic in-repo stand-in so the
//! whole path runs offline; [`parse`] extracts and validates the structured
//! reply, with exactly one corrective re-request on failure.

pub mod client;
pub mod mock;
pub mod parse;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::SignalId;

pub use client::{ChatBackend, ChatRequest, HttpBackend, LlmClientConfig, RetryPolicy};
pub use mock::{MockBackend, MockMode};
pub use parse::{canonicalize_target, explain_with_repair, parse_explanation};
pub use prompt::{
    build_bundle, build_bundle_with_series, build_query, build_query_with_series, build_shot_pool,
    build_system_prompt, estimate_tokens, select_few_shots,
};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("AGC_LLM_API_KEY is not set; the live backend needs a credential")]
    MissingCredential,
    #[error("transport failed after {attempts} attempts: {last}")]
    TransportExhausted { attempts: u32, last: String },
    #[error("request rejected with HTTP {status}: {body}")]
    Request { status: u16, body: String },
    #[error("response could not be parsed after one repair attempt: {detail}")]
    Parse { detail: String, raw: String },
    #[error("prompt estimated at {estimated} tokens exceeds the {budget}-token budget")]
    BudgetExceeded { estimated: usize, budget: usize },
    #[error("explanations are only generated for attack-labeled detections")]
    NormalDetection,
    #[error("few-shot pool holds {pool} examples, cannot select {k}")]
    PoolTooSmall { k: usize, pool: usize },
}

/// Parsed, schema-valid explanation for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub attack_target: SignalId,
    pub attack_magnitude_pu: f64,
    pub attack_start_time_s: f64,
    pub justification: String,
    /// Verbatim model output the report was parsed from.
    pub raw_response: String,
    /// End-to-end seconds across all requests for this sample.
    pub latency_s: f64,
}

/// Ground-truth answer paired with a few-shot example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub target: SignalId,
    pub magnitude_pu: f64,
    pub t_start_s: f64,
}

/// One worked example embedded in the system prompt: the metadata block a
/// query would carry, plus the expected structured answer.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotExample {
    pub sample_id: u64,
    pub input_block: String,
    pub gold: GoldAnswer,
}

/// Fully assembled prompt for one sample, within the token budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    pub query_text: String,
    pub shot_count: usize,
    pub estimated_tokens: usize,
}
