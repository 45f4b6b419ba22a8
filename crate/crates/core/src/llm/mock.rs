//! Rule-based, stage-aware backend for network-free runs.
//!
//! It reads the tagged blocks (`<question>`, `<note>`, `<evidence>`,
//! `<answer>`) of the built-in prompt templates, always from the last
//! occurrence so that demonstrations earlier in the prompt are ignored.
//!
//! - interpret: echoes the patient question, whitespace-trimmed.
//! - score: one `index: score` line per note sentence from a [`ScoringRule`].
//! - generate: concatenates the evidence sentences.
//! - align: links each answer sentence to the note sentence it was copied from.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde_json::json;

use super::{BackendError, BackendSettings, ChatBackend, ChatOutcome, ChatRequest, Role};
use crate::corpus::Stage;
use crate::textproc::normalize_whitespace;

const STOPWORDS: &[&str] = &[
    "about", "after", "all", "also", "and", "any", "are", "been", "before", "being", "but", "can",
    "could", "did", "does", "doing", "for", "from", "had", "has", "have", "her", "hers", "him",
    "his", "how", "into", "its", "may", "more", "not", "now", "off", "once", "only", "other", "our",
    "out", "over", "patient", "patients", "she", "should", "some", "such", "than", "that", "the",
    "their", "them", "then", "there", "these", "they", "this", "those", "through", "too", "under",
    "until", "very", "was", "were", "what", "when", "where", "which", "while", "who", "why", "will",
    "with", "would", "you", "your",
];

/// Lowercased alphanumeric tokens of three or more characters, minus stopwords.
pub fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 3)
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// How the mock scorer rates one note sentence against the query.
pub trait ScoringRule: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, query: &str, sentence: &str) -> u8;
}

/// 5 when the sentence shares at least two content words with the query, else 1.
pub struct OverlapScorer;

impl ScoringRule for OverlapScorer {
    fn name(&self) -> &str {
        "overlap"
    }

    fn score(&self, query: &str, sentence: &str) -> u8 {
        let shared = content_words(query).intersection(&content_words(sentence)).count();
        if shared >= 2 {
            5
        } else {
            1
        }
    }
}

/// 5 for sentences on a known list (the gold essential set), 1 elsewhere.
pub struct GoldSentenceScorer {
    sentences: HashSet<String>,
}

impl GoldSentenceScorer {
    pub fn new<I: IntoIterator<Item = String>>(sentences: I) -> Self {
        Self { sentences: sentences.into_iter().map(|s| normalize_whitespace(&s)).collect() }
    }
}

impl ScoringRule for GoldSentenceScorer {
    fn name(&self) -> &str {
        "gold"
    }

    fn score(&self, _query: &str, sentence: &str) -> u8 {
        if self.sentences.contains(&normalize_whitespace(sentence)) {
            5
        } else {
            1
        }
    }
}

/// Canned outcome for requests of one stage where some user message contains `needle`.
#[derive(Debug, Clone)]
pub struct Fault {
    pub stage: Stage,
    pub needle: Option<String>,
    pub outcome: ChatOutcome,
}

impl Fault {
    fn matches(&self, request: &ChatRequest) -> bool {
        self.stage == request.stage
            && self
                .needle
                .as_deref()
                .is_none_or(|n| {
                    request.messages.iter().any(|m| m.role == Role::User && m.content.contains(n))
                })
    }
}

pub struct MockBackend {
    scorer: Box<dyn ScoringRule>,
    faults: Vec<Fault>,
}

impl MockBackend {
    pub fn new(scorer: Box<dyn ScoringRule>) -> Self {
        Self { scorer, faults: Vec::new() }
    }

    pub fn from_settings(settings: &BackendSettings) -> Result<Self, BackendError> {
        let scorer: Box<dyn ScoringRule> = match settings.mock_scorer.as_str() {
            "overlap" => Box::new(OverlapScorer),
            "gold" => Box::new(GoldSentenceScorer::new(settings.gold_sentences.iter().cloned())),
            other => return Err(BackendError::UnknownScorer(other.to_string())),
        };
        Ok(Self::new(scorer))
    }

    /// Adds a canned outcome. Faults are checked in insertion order before any rule.
    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.faults.push(fault);
        self
    }

    fn respond(&self, request: &ChatRequest) -> ChatOutcome {
        let prompt = request.last_user_message();
        match request.stage {
            Stage::Interpret => ChatOutcome::text(normalize_whitespace(tagged_block(prompt, "question").unwrap_or(""))),
            Stage::Evidence => {
                let query = tagged_block(prompt, "question").unwrap_or("");
                let lines: Vec<String> = numbered_lines(tagged_block(prompt, "note").unwrap_or(""))
                    .iter()
                    .map(|(i, text)| format!("{i}: {}", self.scorer.score(query, text)))
                    .collect();
                ChatOutcome::text(lines.join("\n"))
            }
            Stage::Generate => {
                let evidence = numbered_lines(tagged_block(prompt, "evidence").unwrap_or(""));
                ChatOutcome::text(evidence.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join(" "))
            }
            Stage::Align => {
                let answer = numbered_lines(tagged_block(prompt, "answer").unwrap_or(""));
                let note = numbered_lines(tagged_block(prompt, "note").unwrap_or(""));
                let links: Vec<_> = answer
                    .iter()
                    .filter_map(|(k, sentence)| {
                        let evidence = source_sentences(sentence, &note);
                        (!evidence.is_empty()).then(|| json!({"answer_sentence": k, "evidence": evidence}))
                    })
                    .collect();
                ChatOutcome::text(serde_json::Value::Array(links).to_string())
            }
        }
    }
}

impl ChatBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> ChatOutcome {
        if let Some(fault) = self.faults.iter().find(|f| f.matches(request)) {
            return fault.outcome.clone();
        }
        self.respond(request)
    }
}

/// Note sentences an answer sentence was copied from: exact matches, or a
/// note sentence the answer sentence is a prefix of once trailing punctuation
/// is dropped (a hard-cut tail).
fn source_sentences(sentence: &str, note: &[(usize, String)]) -> Vec<usize> {
    let wanted = normalize_whitespace(sentence);
    let exact: Vec<usize> = note.iter().filter(|(_, t)| normalize_whitespace(t) == wanted).map(|(i, _)| *i).collect();
    if !exact.is_empty() {
        return exact;
    }
    let stem = wanted.trim_end_matches(['.', '!', '?']);
    if stem.is_empty() {
        return Vec::new();
    }
    note.iter()
        .filter(|(_, t)| normalize_whitespace(t).starts_with(stem))
        .map(|(i, _)| *i)
        .collect()
}

/// Body of the last `<tag>...</tag>` block.
pub(crate) fn tagged_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.rfind(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim())
}

/// Lines of the form `[3] sentence text`.
pub(crate) fn numbered_lines(block: &str) -> Vec<(usize, String)> {
    let mut seen = BTreeMap::new();
    for line in block.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix('[') else { continue };
        let Some((num, text)) = rest.split_once(']') else { continue };
        if let Ok(i) = num.trim().parse::<usize>() {
            seen.entry(i).or_insert_with(|| text.trim().to_string());
        }
    }
    seen.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::GenerationConfig;

    fn scoring_prompt(query: &str, sentences: &[&str]) -> ChatRequest {
        let note: Vec<String> = sentences.iter().enumerate().map(|(i, s)| format!("[{}] {s}", i + 1)).collect();
        let prompt = format!(
            "<question>\nexample\n</question>\n<note>\n[1] ignored\n</note>\n<question>\n{query}\n</question>\n<note>\n{}\n</note>",
            note.join("\n")
        );
        ChatRequest::single(Stage::Evidence, "s", prompt, GenerationConfig::for_stage(Stage::Evidence, "mock"))
    }

    #[test]
    fn overlap_scorer_emits_one_line_per_sentence() {
        let req = scoring_prompt("chest pain troponin", &["Chest pain with troponin rise.", "Skin warm.", "Pain in chest."]);
        let out = MockBackend::new(Box::new(OverlapScorer)).complete(&req);
        assert_eq!(out, ChatOutcome::Text("1: 5\n2: 1\n3: 5".into()));
    }

    #[test]
    fn faults_take_precedence() {
        let req = scoring_prompt("q", &["a"]);
        let mock = MockBackend::new(Box::new(OverlapScorer)).with_fault(Fault {
            stage: Stage::Evidence,
            needle: None,
            outcome: ChatOutcome::Blocked("SAFETY".into()),
        });
        assert_eq!(mock.complete(&req), ChatOutcome::Blocked("SAFETY".into()));
    }

    #[test]
    fn content_words_drop_short_and_stop_words() {
        let words = content_words("Why was the patient's BP so high?");
        assert_eq!(words.into_iter().collect::<Vec<_>>(), vec!["high"]);
    }
}
