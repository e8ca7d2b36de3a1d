//! LLM response schema: parsing, validation, and the request/retry flow.

use serde::{Deserialize, Serialize};

use super::backend::TextBackend;
use super::prompt::PromptBundle;
use super::score::QualityScore;
use super::{PromptGenError, Result};

/// Parsed response fields, validated against the task's label vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub analysis: String,
    pub key_features: Vec<String>,
    pub prediction: String,
    pub certainty: i64,
}

/// One graph's augmented text with its provenance and (optional) quality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextRecord {
    pub graph_id: usize,
    pub raw: String,
    pub parsed: ParsedResponse,
    pub provenance: String,
    pub quality: Option<QualityScore>,
}

fn field<'v>(value: &'v serde_json::Value, name: &str) -> Result<&'v serde_json::Value> {
    value
        .get(name)
        .ok_or_else(|| PromptGenError::MalformedResponse(format!("missing field '{name}'")))
}

/// Validate a raw response against the schema. Accepts the certainty as a
/// JSON number or a numeric string (models quote it both ways).
pub fn parse_response(raw: &str, label_names: &[String]) -> Result<ParsedResponse> {
    let value: serde_json::Value = serde_json::from_str(raw.trim())
        .map_err(|e| PromptGenError::MalformedResponse(format!("invalid JSON: {e}")))?;

    let analysis = field(&value, "analysis")?
        .as_str()
        .ok_or_else(|| PromptGenError::MalformedResponse("'analysis' is not a string".into()))?
        .to_string();

    let key_features = field(&value, "key_features")?
        .as_array()
        .ok_or_else(|| PromptGenError::MalformedResponse("'key_features' is not an array".into()))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| PromptGenError::MalformedResponse("non-string key feature".into()))
        })
        .collect::<Result<Vec<_>>>()?;

    let prediction = field(&value, "prediction")?
        .as_str()
        .ok_or_else(|| PromptGenError::MalformedResponse("'prediction' is not a string".into()))?
        .to_string();
    if !label_names.iter().any(|l| l == &prediction) {
        return Err(PromptGenError::MalformedResponse(format!(
            "prediction '{prediction}' not in label vocabulary {label_names:?}"
        )));
    }

    let certainty_value = field(&value, "certainty")?;
    let certainty = match certainty_value {
        serde_json::Value::Number(n) => n
            .as_i64()
            .ok_or_else(|| PromptGenError::MalformedResponse("non-integer certainty".into()))?,
        serde_json::Value::String(s) => s
            .trim()
            .parse::<i64>()
            .map_err(|_| PromptGenError::MalformedResponse(format!("certainty '{s}' is not an integer")))?,
        _ => return Err(PromptGenError::MalformedResponse("certainty must be a number".into())),
    };
    if !(1..=5).contains(&certainty) {
        return Err(PromptGenError::MalformedResponse(format!(
            "certainty {certainty} outside [1, 5]"
        )));
    }

    Ok(ParsedResponse { analysis, key_features, prediction, certainty })
}

/// Ask the backend for text and parse it. On a schema violation, issue one
/// structured retry asking for valid JSON; a second violation is an error
/// (the caller quarantines it).
pub fn request_text<B: TextBackend + ?Sized>(
    prompt: &PromptBundle,
    graph_id: usize,
    label_names: &[String],
    backend: &B,
) -> Result<TextRecord> {
    let raw = backend.complete(&prompt.assembled)?;
    let parsed = match parse_response(&raw, label_names) {
        Ok(p) => p,
        Err(first_err) => {
            let retry_prompt = format!(
                "{}\n\nYour previous response was rejected: {first_err}. \
Respond again with ONLY a valid JSON object matching the required schema.",
                prompt.assembled
            );
            let raw2 = backend.complete(&retry_prompt)?;
            match parse_response(&raw2, label_names) {
                Ok(p) => {
                    return Ok(TextRecord {
                        graph_id,
                        raw: raw2,
                        parsed: p,
                        provenance: backend.name().to_string(),
                        quality: None,
                    });
                }
                Err(second_err) => {
                    return Err(PromptGenError::MalformedResponse(format!(
                        "after one retry: {second_err} (first failure: {first_err}); raw: {raw2}"
                    )));
                }
            }
        }
    };
    Ok(TextRecord {
        graph_id,
        raw,
        parsed,
        provenance: backend.name().to_string(),
        quality: None,
    })
}
