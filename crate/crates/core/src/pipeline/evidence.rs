//! Sentence scoring and the tiered, recall-biased evidence filter.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use super::prompts::{examples_block, numbered_note, render};
use super::{EvidenceSelection, PipelineError, SentenceScore, StageSetup};
use crate::corpus::{CaseRecord, Stage, Tier};
use crate::llm::{ChatBackend, ChatOutcome, ChatRequest};

/// Why no usable score list came back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreFailure {
    Parse(String),
    Blocked(String),
    Transport(String),
}

impl fmt::Display for ScoreFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreFailure::Parse(d) => write!(f, "unparseable scores: {d}"),
            ScoreFailure::Blocked(d) => write!(f, "blocked: {d}"),
            ScoreFailure::Transport(d) => write!(f, "transport error: {d}"),
        }
    }
}

/// Asks the model for a 1-5 score per note sentence, relative to `query`.
pub fn score_sentences(
    case: &CaseRecord,
    query: &str,
    setup: &StageSetup,
    backend: &dyn ChatBackend,
) -> Result<Result<Vec<SentenceScore>, ScoreFailure>, PipelineError> {
    let vars = BTreeMap::from([
        ("examples", examples_block(&setup.assets.few_shot_examples)),
        ("question", query.trim().to_string()),
        ("note", numbered_note(case)),
    ]);
    let prompt = render(&setup.assets.template, &vars)?;
    let request = ChatRequest::single(Stage::Evidence, &setup.assets.system_persona, prompt, setup.config.clone());
    Ok(match backend.complete(&request) {
        ChatOutcome::Text(text) => parse_scores(&text, case.note_len()),
        ChatOutcome::Blocked(r) => Err(ScoreFailure::Blocked(r)),
        ChatOutcome::TransportError(d) => Err(ScoreFailure::Transport(d)),
    })
}

/// Parses model output into one score per sentence `1..=note_len`.
///
/// A JSON object `{"1": 5, ...}` or array of `{index, score}` objects or
/// `[index, score]` pairs is tried first; if the text holds no JSON, lines of
/// the form `3: 5` are accepted. Missing, repeated or out-of-range indices
/// and scores outside 1..=5 fail.
pub fn parse_scores(text: &str, note_len: usize) -> Result<Vec<SentenceScore>, ScoreFailure> {
    let pairs = match json_payload(text) {
        Some(value) => match pairs_from_json(&value) {
            Ok(pairs) => pairs,
            Err(json_err) => pairs_from_lines(text).map_err(|_| json_err)?,
        },
        None => pairs_from_lines(text)?,
    };
    let mut by_index = BTreeMap::new();
    for (index, score) in pairs {
        if index == 0 || index as usize > note_len {
            return Err(ScoreFailure::Parse(format!("sentence {index} outside 1..={note_len}")));
        }
        if !(1..=5).contains(&score) {
            return Err(ScoreFailure::Parse(format!("sentence {index} has score {score}, expected 1..=5")));
        }
        if by_index.insert(index as usize, score as u8).is_some() {
            return Err(ScoreFailure::Parse(format!("sentence {index} scored twice")));
        }
    }
    if by_index.len() != note_len {
        let missing: Vec<String> = (1..=note_len)
            .filter(|i| !by_index.contains_key(i))
            .map(|i| i.to_string())
            .collect();
        return Err(ScoreFailure::Parse(format!("no score for sentence(s) {}", missing.join(", "))));
    }
    Ok(by_index.into_iter().map(|(index, score)| SentenceScore { index, score }).collect())
}

/// First JSON object or array embedded in the text, ignoring code fences and chatter.
pub(crate) fn json_payload(text: &str) -> Option<Value> {
    let start = text.find(['{', '['])?;
    let end = text.rfind(['}', ']'])?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

pub(crate) fn as_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn pairs_from_json(value: &Value) -> Result<Vec<(i64, i64)>, ScoreFailure> {
    let bad = |what: &str| ScoreFailure::Parse(format!("unexpected JSON: {what}"));
    match value {
        Value::Object(map) if map.len() == 1 && map.contains_key("scores") => pairs_from_json(&map["scores"]),
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| {
                let index = k.trim().trim_matches(['[', ']']).parse().map_err(|_| bad(&format!("key {k:?}")))?;
                let score = as_int(v).ok_or_else(|| bad(&format!("score {v}")))?;
                Ok((index, score))
            })
            .collect(),
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::Array(pair) if pair.len() == 2 => {
                    Ok((as_int(&pair[0]).ok_or_else(|| bad("index"))?, as_int(&pair[1]).ok_or_else(|| bad("score"))?))
                }
                Value::Object(o) => {
                    let index = ["index", "sentence", "id"].iter().find_map(|k| o.get(*k)).and_then(as_int);
                    let score = ["score", "relevance"].iter().find_map(|k| o.get(*k)).and_then(as_int);
                    match (index, score) {
                        (Some(i), Some(s)) => Ok((i, s)),
                        _ => Err(bad("array item without index/score")),
                    }
                }
                other => Err(bad(&other.to_string())),
            })
            .collect(),
        other => Err(bad(&other.to_string())),
    }
}

fn pairs_from_lines(text: &str) -> Result<Vec<(i64, i64)>, ScoreFailure> {
    static LINE: OnceLock<Regex> = OnceLock::new();
    let re = LINE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:sentence\s*)?[\[(]?\s*(\d+)\s*[\])]?\s*(?::|=|-|->|=>)\s*(-?\d+)\b").unwrap()
    });
    let pairs: Vec<(i64, i64)> = text
        .lines()
        .filter_map(|line| re.captures(line))
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .collect();
    if pairs.is_empty() {
        return Err(ScoreFailure::Parse("no JSON and no `index: score` lines".into()));
    }
    Ok(pairs)
}

/// Tiered selection: sentences scoring at least 4; if none, at least 3; if
/// none, or when scoring failed, the first three sentences of the note.
pub fn filter_evidence(
    case_id: &str,
    scores: Result<&[SentenceScore], &ScoreFailure>,
    note_len: usize,
) -> EvidenceSelection {
    let at_least = |scores: &[SentenceScore], min: u8| -> Vec<usize> {
        let mut v: Vec<usize> = scores.iter().filter(|s| s.score >= min).map(|s| s.index).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (indices, tier, fallback) = match scores {
        Ok(scores) => {
            let strict = at_least(scores, 4);
            if !strict.is_empty() {
                (strict, Tier::Strict, None)
            } else {
                let lenient = at_least(scores, 3);
                if !lenient.is_empty() {
                    (lenient, Tier::Lenient, None)
                } else {
                    (first_sentences(note_len), Tier::Fallback, Some("no sentence scored 3 or higher".to_string()))
                }
            }
        }
        Err(failure) => (first_sentences(note_len), Tier::Fallback, Some(failure.to_string())),
    };
    EvidenceSelection { case_id: case_id.to_string(), indices, tier, fallback }
}

fn first_sentences(note_len: usize) -> Vec<usize> {
    (1..=note_len.min(3)).collect()
}
