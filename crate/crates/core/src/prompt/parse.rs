//! Parsers for the two structured outputs the pipeline consumes.

use serde_json::{json, Map, Value};

use crate::model::{DimensionScores, JudgeVerdict, SuggestionSet};

use super::extract::first_json_object;
use super::PromptError;

/// Parse a generation response into a [`SuggestionSet`].
///
/// Extraction failures never error: a set with `format_ok == false` and
/// no candidates is returned so the reward side can assign the format
/// penalty. The returned `context_ref` is empty; callers bind it with
/// [`SuggestionSet::for_context`].
pub fn parse_options(raw: &str, k: usize) -> SuggestionSet {
    let Some(map) = first_json_object(raw) else {
        return SuggestionSet::malformed("", k, raw);
    };
    let Some(Value::Array(items)) = map.get("options") else {
        return SuggestionSet::malformed("", k, raw);
    };
    if items.len() != k {
        return SuggestionSet::malformed("", k, raw);
    }
    let mut candidates = Vec::with_capacity(k);
    for item in items {
        let Some(text) = item.as_str() else {
            return SuggestionSet::malformed("", k, raw);
        };
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return SuggestionSet::malformed("", k, raw);
        }
        candidates.push(trimmed.to_owned());
    }
    for i in 0..candidates.len() {
        for j in (i + 1)..candidates.len() {
            if candidates[i] == candidates[j] {
                return SuggestionSet::malformed("", k, raw);
            }
        }
    }
    SuggestionSet {
        context_ref: String::new(),
        candidates,
        k,
        format_ok: true,
        raw_output: raw.to_owned(),
    }
}

fn required_int(map: &Map<String, Value>, field: &'static str) -> Result<i64, PromptError> {
    let value = map.get(field).ok_or(PromptError::MissingField(field))?;
    value.as_i64().ok_or_else(|| PromptError::BadField {
        field,
        detail: format!("expected an integer, got {value}"),
    })
}

fn count_in_range(value: i64, field: &'static str, k: usize) -> Result<usize, PromptError> {
    if value < 0 || value as usize > k {
        return Err(PromptError::BadField {
            field,
            detail: format!("{value} outside 0..={k}"),
        });
    }
    Ok(value as usize)
}

fn binary_field(map: &Map<String, Value>, field: &'static str) -> Result<bool, PromptError> {
    match required_int(map, field)? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(PromptError::BadField {
            field,
            detail: format!("expected 0 or 1, got {other}"),
        }),
    }
}

const DIMENSION_FIELDS: [&str; 3] = ["Answerability", "Factual_Accuracy", "Information_Gain"];

/// Parse a judge response into a [`JudgeVerdict`].
///
/// The per-question schema is preferred. When only the aggregate counts
/// are present, failures are packed deterministically onto the last
/// candidates and the verdict is flagged `degraded`. A missing or
/// non-integer `score` is a parse error, never a zero score.
pub fn parse_judge_output(raw: &str, k: usize) -> Result<JudgeVerdict, PromptError> {
    let map = first_json_object(raw).ok_or(PromptError::NoJsonObject)?;
    let score = count_in_range(required_int(&map, "score")?, "score", k)?;
    let reason = map
        .get("reason")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_owned();

    if let Some(per_question) = map.get("per_question") {
        let items = per_question.as_array().ok_or_else(|| PromptError::BadField {
            field: "per_question",
            detail: "expected an array".to_owned(),
        })?;
        if items.len() != k {
            return Err(PromptError::BadField {
                field: "per_question",
                detail: format!("expected {k} entries, got {}", items.len()),
            });
        }
        let mut per_candidate = Vec::with_capacity(k);
        for item in items {
            let entry = item.as_object().ok_or_else(|| PromptError::BadField {
                field: "per_question",
                detail: "entries must be objects".to_owned(),
            })?;
            per_candidate.push(DimensionScores::new(
                binary_field(entry, DIMENSION_FIELDS[0])?,
                binary_field(entry, DIMENSION_FIELDS[1])?,
                binary_field(entry, DIMENSION_FIELDS[2])?,
            ));
        }
        let passing = per_candidate.iter().filter(|d| d.passes_all()).count();
        if passing != score {
            return Err(PromptError::Inconsistent(format!(
                "score {score} but {passing} questions pass every rule"
            )));
        }
        return Ok(JudgeVerdict {
            per_candidate,
            aggregate_score: score as u32,
            reason,
            raw_output: raw.to_owned(),
            degraded: false,
        });
    }

    // Aggregate-count fallback: each dimension reports how many of the k
    // questions comply. Absent counts default to the overall score.
    let mut counts = [score; 3];
    for (slot, field) in counts.iter_mut().zip(DIMENSION_FIELDS) {
        if map.contains_key(field) {
            *slot = count_in_range(required_int(&map, field)?, field, k)?;
        }
    }
    let min_count = counts.iter().copied().min().unwrap_or(score);
    if min_count != score {
        return Err(PromptError::Inconsistent(format!(
            "score {score} but the dimension counts imply {min_count} fully-compliant questions"
        )));
    }
    let per_candidate = (0..k)
        .map(|i| DimensionScores::new(i < counts[0], i < counts[1], i < counts[2]))
        .collect();
    Ok(JudgeVerdict {
        per_candidate,
        aggregate_score: score as u32,
        reason,
        raw_output: raw.to_owned(),
        degraded: true,
    })
}

/// Serialize a verdict back into judge-response JSON: the aggregate
/// schema, plus `per_question` unless the verdict is degraded (a degraded
/// verdict's per-question detail is reconstructed, not reported, so
/// emitting it would launder the distinction).
pub fn render_judge_reply(verdict: &JudgeVerdict) -> String {
    let count = |pick: fn(&DimensionScores) -> bool| {
        verdict.per_candidate.iter().filter(|d| pick(d)).count()
    };
    let mut map = Map::new();
    map.insert("score".into(), json!(verdict.aggregate_score));
    map.insert("reason".into(), json!(verdict.reason));
    map.insert("Answerability".into(), json!(count(|d| d.answerable)));
    map.insert("Factual_Accuracy".into(), json!(count(|d| d.factual)));
    map.insert("Information_Gain".into(), json!(count(|d| d.informative)));
    if !verdict.degraded {
        let per_question: Vec<Value> = verdict
            .per_candidate
            .iter()
            .map(|d| {
                json!({
                    "Answerability": u8::from(d.answerable),
                    "Factual_Accuracy": u8::from(d.factual),
                    "Information_Gain": u8::from(d.informative),
                })
            })
            .collect();
        map.insert("per_question".into(), Value::Array(per_question));
    }
    Value::Object(map).to_string()
}
