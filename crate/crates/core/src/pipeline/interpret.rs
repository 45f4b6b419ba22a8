use std::collections::BTreeMap;

use super::prompts::{examples_block, render};
use super::{InterpretedQuery, PipelineError, StageSetup};
use crate::corpus::{CaseRecord, Stage};
use crate::llm::{ChatBackend, ChatOutcome, ChatRequest};
use crate::textproc::{count_words, hard_truncate};

/// Rewrites the patient's message as a short clinical query.
///
/// Model output is cut to `max_words` words. When the backend blocks or
/// fails, the query is the patient question itself, cut the same way.
pub fn interpret_question(
    case: &CaseRecord,
    setup: &StageSetup,
    max_words: usize,
    backend: &dyn ChatBackend,
) -> Result<InterpretedQuery, PipelineError> {
    setup.assets.check(Stage::Interpret).map_err(|e| PipelineError::Template(e.to_string()))?;
    let vars = BTreeMap::from([
        ("examples", examples_block(&setup.assets.few_shot_examples)),
        ("narrative", case.patient_narrative.trim().to_string()),
        ("question", case.patient_question.trim().to_string()),
    ]);
    let prompt = render(&setup.assets.template, &vars)?;
    let request = ChatRequest::single(Stage::Interpret, &setup.assets.system_persona, prompt, setup.config.clone());

    let failure = match backend.complete(&request) {
        ChatOutcome::Text(text) => {
            let query = hard_truncate(clean_reply(&text), max_words);
            if !query.is_empty() {
                return Ok(InterpretedQuery {
                    case_id: case.case_id.clone(),
                    truncated: count_words(clean_reply(&text)) > max_words,
                    query,
                    fallback: None,
                });
            }
            "empty query after clean-up".to_string()
        }
        other => other.to_string(),
    };

    let source = if case.patient_question.trim().is_empty() {
        &case.patient_narrative
    } else {
        &case.patient_question
    };
    let query = hard_truncate(source, max_words);
    if query.is_empty() {
        return Err(PipelineError::EmptyQuestion(case.case_id.clone()));
    }
    Ok(InterpretedQuery { case_id: case.case_id.clone(), query, truncated: true, fallback: Some(failure) })
}

/// Drops surrounding quotes and a leading `Query:` label the model sometimes adds.
fn clean_reply(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("Query:").or_else(|| t.strip_prefix("Output:")).unwrap_or(t).trim();
    t.trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}').trim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NoteSentence, PromptAssets};
    use crate::llm::{Fault, GenerationConfig, MockBackend, OverlapScorer};

    fn case(question: &str) -> CaseRecord {
        CaseRecord {
            case_id: "c1".into(),
            patient_narrative: "My mother was in the ICU.".into(),
            patient_question: question.into(),
            clinician_question: None,
            note: vec![NoteSentence { index: 1, text: "Admitted.".into() }],
            gold: None,
        }
    }

    fn setup() -> StageSetup {
        StageSetup {
            assets: PromptAssets::builtin(Stage::Interpret),
            config: GenerationConfig::for_stage(Stage::Interpret, "mock"),
        }
    }

    fn canned(outcome: ChatOutcome) -> MockBackend {
        MockBackend::new(Box::new(OverlapScorer)).with_fault(Fault { stage: Stage::Interpret, needle: None, outcome })
    }

    #[test]
    fn long_reply_is_truncated() {
        let reply = (1..=20).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let q = interpret_question(&case("why?"), &setup(), 15, &canned(ChatOutcome::Text(reply))).unwrap();
        assert_eq!(count_words(&q.query), 15);
        assert!(q.truncated);
        assert!(q.fallback.is_none());
    }

    #[test]
    fn short_reply_passes_through() {
        let reply = "Why was the patient's diuretic stopped at discharge?";
        let q = interpret_question(&case("why?"), &setup(), 15, &canned(ChatOutcome::Text(reply.into()))).unwrap();
        assert_eq!(q.query, reply);
        assert!(!q.truncated);
    }

    #[test]
    fn blocked_falls_back_to_patient_question() {
        let question = (1..=20).map(|i| format!("q{i}")).collect::<Vec<_>>().join(" ");
        let q = interpret_question(&case(&question), &setup(), 15, &canned(ChatOutcome::Blocked("SAFETY".into()))).unwrap();
        assert_eq!(q.query, (1..=15).map(|i| format!("q{i}")).collect::<Vec<_>>().join(" "));
        assert!(q.truncated);
        assert!(q.fallback.unwrap().contains("blocked"));
    }

    #[test]
    fn wrong_example_count_is_rejected() {
        let mut s = setup();
        s.assets.few_shot_examples.pop();
        let mock = MockBackend::new(Box::new(OverlapScorer));
        assert!(matches!(interpret_question(&case("q"), &s, 15, &mock), Err(PipelineError::Template(_))));
    }
}
