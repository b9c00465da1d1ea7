//! Structured-output parsing: finds the first balanced JSON object in a
//! response (tolerating surrounding prose and code fences), validates it
//! against the explanation schema, and canonicalizes target aliases. On
//! failure the caller re-requests once with a corrective instruction.

use serde_json::Value;

use crate::explainer::client::{request_explanation, ChatBackend, LlmClientConfig};
use crate::explainer::{ExplainError, ExplanationReport, PromptBundle};
use crate::plant::SignalId;

/// Fields recovered from a schema-valid response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedExplanation {
    pub attack_target: SignalId,
    pub attack_magnitude_pu: f64,
    pub attack_start_time_s: f64,
    pub justification: String,
}

/// Maps a model-written target name onto one of the three signals. The
/// alias list is fixed; anything else is schema-invalid.
pub fn canonicalize_target(raw: &str) -> Option<SignalId> {
    let mut normalized = raw.trim().to_lowercase();
    normalized.retain(|c| !matches!(c, '(' | ')' | '.' | ','));
    let normalized = normalized
        .trim_start_matches("the ")
        .replace([' ', '-'], "_")
        .replace("δ", "delta_")
        .replace("__", "_");
    match normalized.as_str() {
        "delta_f1" | "deltaf1" | "df1" | "f1" | "delta_f_1" | "frequency_1"
        | "area_1_frequency" | "delta_f1_pu" => Some(SignalId::DeltaF1),
        "delta_f2" | "deltaf2" | "df2" | "f2" | "delta_f_2" | "frequency_2"
        | "area_2_frequency" | "delta_f2_pu" => Some(SignalId::DeltaF2),
        "delta_p_tie" | "deltap_tie" | "delta_ptie" | "deltaptie" | "p_tie" | "ptie"
        | "tie_line" | "tieline" | "dp_tie" | "tie_line_power" | "delta_p_tie_pu" => {
            Some(SignalId::DeltaPTie)
        }
        _ => None,
    }
}

/// Yields the first balanced `{...}` span that parses as a JSON object.
/// Brace balancing is string-aware, so braces inside quoted text do not
/// count; code fences and prose around the object are ignored naturally.
pub fn first_json_object(raw: &str) -> Option<Value> {
    let bytes = raw.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = raw[search_from..].find('{') {
        let start = search_from + rel;
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(value) = serde_json::from_str::<Value>(&raw[start..=end]) {
                if value.is_object() {
                    return Some(value);
                }
            }
        }
        search_from = start + 1;
    }
    None
}

fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn numeric_field(value: &Value, key: &str) -> Result<f64, String> {
    match value.get(key) {
        Some(Value::Number(n)) => n
            .as_f64()
            .ok_or_else(|| format!("{key} is not representable as f64")),
        Some(Value::String(s)) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("{key} is a non-numeric string: {s:?}")),
        Some(other) => Err(format!("{key} has type {}", type_name(other))),
        None => Err(format!("{key} is missing")),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Extracts and validates one explanation from a raw model response.
pub fn parse_explanation(raw: &str) -> Result<ParsedExplanation, String> {
    let object = first_json_object(raw)
        .ok_or_else(|| "no balanced JSON object in the response".to_string())?;

    let target_raw = match object.get("attack_target") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(format!("attack_target has type {}", type_name(other))),
        None => return Err("attack_target is missing".into()),
    };
    let attack_target = canonicalize_target(&target_raw)
        .ok_or_else(|| format!("unknown attack_target {target_raw:?}"))?;

    let attack_magnitude_pu = numeric_field(&object, "attack_magnitude_pu")?;
    if !attack_magnitude_pu.is_finite() {
        return Err("attack_magnitude_pu is not finite".into());
    }
    let attack_start_time_s = numeric_field(&object, "attack_start_time_s")?;
    if !(0.0..=60.0).contains(&attack_start_time_s) {
        return Err(format!(
            "attack_start_time_s = {attack_start_time_s} outside [0, 60]"
        ));
    }
    let justification = match object.get("justification") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(format!("justification has type {}", type_name(other))),
        None => return Err("justification is missing".into()),
    };

    Ok(ParsedExplanation {
        attack_target,
        attack_magnitude_pu,
        attack_start_time_s,
        justification,
    })
}

const REPAIR_INSTRUCTION: &str = "Your previous reply could not be parsed. Respond again with \
exactly one JSON object and no other text, matching this schema: ";

/// Requests an explanation and parses it, re-requesting exactly once with a
/// corrective instruction if the first response is invalid. Returns the
/// report plus the number of requests issued (1 or 2).
pub fn explain_with_repair(
    cfg: &LlmClientConfig,
    backend: &dyn ChatBackend,
    bundle: &PromptBundle,
) -> Result<(ExplanationReport, u32), ExplainError> {
    let first = request_explanation(cfg, backend, &bundle.system_text, &bundle.query_text)?;
    match parse_explanation(&first.content) {
        Ok(parsed) => Ok((report(parsed, first.content, first.latency_s), 1)),
        Err(_) => {
            let corrective = format!(
                "{}\n\n{REPAIR_INSTRUCTION}{}",
                bundle.query_text,
                crate::explainer::prompt::OUTPUT_SCHEMA
            );
            let second = request_explanation(cfg, backend, &bundle.system_text, &corrective)?;
            match parse_explanation(&second.content) {
                Ok(parsed) => Ok((
                    report(parsed, second.content, first.latency_s + second.latency_s),
                    2,
                )),
                Err(detail) => Err(ExplainError::Parse {
                    detail,
                    raw: second.content,
                }),
            }
        }
    }
}

fn report(parsed: ParsedExplanation, raw: String, latency_s: f64) -> ExplanationReport {
    ExplanationReport {
        attack_target: parsed.attack_target,
        attack_magnitude_pu: parsed.attack_magnitude_pu,
        attack_start_time_s: parsed.attack_start_time_s,
        justification: parsed.justification,
        raw_response: raw,
        latency_s,
    }
}
