//! Answer–evidence alignment with conservative validation.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use super::evidence::{as_int, json_payload};
use super::prompts::{examples_block, numbered_answer, numbered_note, render};
use super::{AlignmentLink, AlignmentMap, PipelineError, StageSetup};
use crate::corpus::{CaseRecord, Stage};
use crate::llm::{ChatBackend, ChatMessage, ChatOutcome, ChatRequest};

const REPROMPT: &str = "Your previous reply was not a valid JSON array. Reply again with only the JSON array of \
{\"answer_sentence\": <number>, \"evidence\": [<note sentence numbers>]} objects and nothing else.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentParse {
    pub links: Vec<AlignmentLink>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignOutput {
    pub map: AlignmentMap,
    pub warnings: Vec<String>,
    pub reprompted: bool,
    pub fallback: Option<String>,
}

/// Links each answer sentence to the note sentences that directly support it.
///
/// Malformed JSON gets one reprompt. If that also fails, or the call is
/// blocked, every answer sentence is linked to `fallback_evidence`.
pub fn align_answer(
    case: &CaseRecord,
    answer_sentences: &[String],
    fallback_evidence: &[usize],
    setup: &StageSetup,
    backend: &dyn ChatBackend,
) -> Result<AlignOutput, PipelineError> {
    let vars = BTreeMap::from([
        ("examples", examples_block(&setup.assets.few_shot_examples)),
        ("answer", numbered_answer(answer_sentences)),
        ("note", numbered_note(case)),
    ]);
    let prompt = render(&setup.assets.template, &vars)?;
    let mut request = ChatRequest::single(Stage::Align, &setup.assets.system_persona, prompt, setup.config.clone());
    let n_answer = answer_sentences.len();
    let note_len = case.note_len();

    let mut reprompted = false;
    let failure = loop {
        match backend.complete(&request) {
            ChatOutcome::Text(text) => match parse_alignment(&text, n_answer, note_len) {
                Ok(parsed) => {
                    return Ok(AlignOutput {
                        map: AlignmentMap { case_id: case.case_id.clone(), links: parsed.links },
                        warnings: parsed.warnings,
                        reprompted,
                        fallback: None,
                    })
                }
                Err(reason) if !reprompted => {
                    reprompted = true;
                    tracing::debug!(case_id = %case.case_id, %reason, "reprompting aligner");
                    request.messages.push(ChatMessage::assistant(text));
                    request.messages.push(ChatMessage::user(REPROMPT));
                }
                Err(reason) => break format!("malformed alignment after reprompt: {reason}"),
            },
            other => break other.to_string(),
        }
    };

    let evidence: BTreeSet<usize> = fallback_evidence.iter().copied().filter(|&e| e >= 1 && e <= note_len).collect();
    let links = if evidence.is_empty() {
        Vec::new()
    } else {
        (1..=n_answer).map(|k| AlignmentLink { answer_sentence: k, evidence: evidence.clone() }).collect()
    };
    Ok(AlignOutput {
        map: AlignmentMap { case_id: case.case_id.clone(), links },
        warnings: Vec::new(),
        reprompted,
        fallback: Some(failure),
    })
}

/// Parses and validates an alignment reply.
///
/// Accepts `[{"answer_sentence": 1, "evidence": [3]}]`, `[{"1": [3]}]` or
/// `{"1": [3]}`. Out-of-range ids are dropped with a warning, repeated
/// answer sentences are merged, and links left without evidence are omitted.
/// Anything that is not one of those shapes is an error.
pub fn parse_alignment(text: &str, n_answer: usize, note_len: usize) -> Result<AlignmentParse, String> {
    let value = json_payload(text).ok_or("no JSON array or object in reply")?;
    let raw: Vec<(Value, Value)> = match value {
        Value::Array(items) => {
            let mut raw = Vec::new();
            for item in items {
                let Value::Object(obj) = item else { return Err(format!("array item is not an object: {item}")) };
                let sentence = ["answer_sentence", "sentence", "answer"].iter().find_map(|k| obj.get(*k));
                let evidence = ["evidence", "evidence_sentences", "citations"].iter().find_map(|k| obj.get(*k));
                match (sentence, evidence) {
                    (Some(s), Some(e)) => raw.push((s.clone(), e.clone())),
                    _ if obj.len() == 1 => {
                        let (k, v) = obj.into_iter().next().unwrap();
                        raw.push((Value::String(k), v));
                    }
                    _ => return Err("array item lacks answer_sentence/evidence".into()),
                }
            }
            raw
        }
        Value::Object(obj) => obj.into_iter().map(|(k, v)| (Value::String(k), v)).collect(),
        other => return Err(format!("unexpected JSON {other}")),
    };

    let mut warnings = Vec::new();
    let mut merged: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (sentence, evidence) in raw {
        let k = as_int(&sentence).ok_or_else(|| format!("answer sentence id {sentence} is not an integer"))?;
        let ids: Vec<Value> = match evidence {
            Value::Array(ids) => ids,
            single @ (Value::Number(_) | Value::String(_)) => vec![single],
            other => return Err(format!("evidence for answer sentence {k} is {other}")),
        };
        if k < 1 || k as usize > n_answer {
            warnings.push(format!("dropped link for answer sentence {k} (answer has {n_answer})"));
            continue;
        }
        let entry = merged.entry(k as usize).or_default();
        for id in ids {
            match as_int(&id) {
                Some(e) if e >= 1 && e as usize <= note_len => {
                    entry.insert(e as usize);
                }
                _ => warnings.push(format!("dropped evidence id {id} for answer sentence {k} (note has {note_len})")),
            }
        }
    }
    let links = merged
        .into_iter()
        .filter(|(_, ev)| !ev.is_empty())
        .map(|(answer_sentence, evidence)| AlignmentLink { answer_sentence, evidence })
        .collect();
    Ok(AlignmentParse { links, warnings })
}
