use std::collections::BTreeMap;

use super::prompts::{numbered_note, numbered_sentences, render};
use super::{EvidenceSelection, GeneratedAnswer, InterpretedQuery, PipelineError, StageSetup};
use crate::corpus::{CaseRecord, Stage};
use crate::llm::{ChatBackend, ChatOutcome, ChatRequest};
use crate::textproc::{enforce_answer_limit, segment_sentences, SoftCut, TruncationPolicy};

/// Drafts the grounded answer from the interpreted query, the selected
/// evidence and the full note, then enforces the word cap.
///
/// On a blocked, failed or empty reply the answer is the selected evidence sentences
/// themselves, under the same cap.
pub fn generate_answer(
    case: &CaseRecord,
    query: &InterpretedQuery,
    evidence: &EvidenceSelection,
    setup: &StageSetup,
    policy: &TruncationPolicy,
    backend: &dyn ChatBackend,
) -> Result<GeneratedAnswer, PipelineError> {
    setup.assets.check(Stage::Generate).map_err(|e| PipelineError::Template(e.to_string()))?;
    let vars = BTreeMap::from([
        ("examples", String::new()),
        ("question", query.query.clone()),
        ("evidence", numbered_sentences(case, evidence.indices.iter().copied())),
        ("note", numbered_note(case)),
    ]);
    let prompt = render(&setup.assets.template, &vars)?;
    let request = ChatRequest::single(Stage::Generate, &setup.assets.system_persona, prompt, setup.config.clone());

    let (draft, fallback) = match backend.complete(&request) {
        ChatOutcome::Text(text) if !text.trim().is_empty() => (text, None),
        other => {
            let joined = evidence
                .indices
                .iter()
                .filter_map(|&i| case.sentence(i))
                .map(|s| s.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let reason = match other {
                ChatOutcome::Text(_) => "empty answer".to_string(),
                o => o.to_string(),
            };
            (joined, Some(reason))
        }
    };
    Ok(finalize(&case.case_id, &draft, policy, fallback))
}

/// Applies the soft cut and guarantees terminal punctuation.
pub(crate) fn finalize(case_id: &str, draft: &str, policy: &TruncationPolicy, fallback: Option<String>) -> GeneratedAnswer {
    let (answer, kind) = enforce_answer_limit(draft, policy);
    GeneratedAnswer {
        case_id: case_id.to_string(),
        answer_sentences: segment_sentences(&answer),
        answer,
        soft_cut_applied: kind != SoftCut::Unchanged,
        fallback,
    }
}
