//! Deterministic text mechanics shared by the pipeline stages and the scorer.
//!
//! A word is a maximal run of non-whitespace characters. Punctuation stays
//! attached to the word it touches, so `"pain."` is one word.

use std::collections::HashSet;
use std::sync::OnceLock;

const ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

/// Word-cap policy applied to model output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy {
    pub max_words: usize,
    /// Minimum share of `max_words` a sentence-boundary cut must keep.
    pub soft_cut_ratio: f64,
    pub append_period_on_hard_cut: bool,
}

impl TruncationPolicy {
    /// Interpreted queries: 15 words, plain hard cut.
    pub const fn query() -> Self {
        Self { max_words: 15, soft_cut_ratio: 1.0, append_period_on_hard_cut: false }
    }

    /// Generated answers: 75 words, sentence-boundary cut when it keeps at least 60%.
    pub const fn answer() -> Self {
        Self { max_words: 75, soft_cut_ratio: 0.60, append_period_on_hard_cut: true }
    }

    pub fn is_valid(&self) -> bool {
        self.max_words >= 1 && self.soft_cut_ratio > 0.0 && self.soft_cut_ratio <= 1.0
    }

    /// Smallest word count a sentence-boundary cut may keep.
    pub fn min_soft_cut_words(&self) -> usize {
        // 0.6 * 75 is not exact in binary floating point.
        (self.soft_cut_ratio * self.max_words as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// First `max_words` words joined by single spaces.
pub fn hard_truncate(text: &str, max_words: usize) -> String {
    text.split_whitespace().take(max_words).collect::<Vec<_>>().join(" ")
}

pub fn ends_with_terminal(text: &str) -> bool {
    matches!(text.trim_end().chars().last(), Some('.' | '!' | '?'))
}

/// Outcome of [`soft_cut_detailed`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SoftCut {
    /// Text was within the cap and is returned as is.
    Unchanged,
    /// Cut at the last word ending in a period, keeping this many words.
    SentenceBoundary(usize),
    /// Cut at exactly `max_words` words.
    Hard,
}

/// Word-cap enforcement that prefers a sentence boundary.
///
/// Over the cap, the text is first reduced to its `max_words`-word prefix.
/// If the last word of that prefix ending in `'.'` sits at or beyond
/// [`TruncationPolicy::min_soft_cut_words`], the prefix is cut there.
/// Otherwise the full prefix is kept and a period appended unless it already
/// ends in `.`, `!` or `?`.
pub fn soft_cut(text: &str, policy: &TruncationPolicy) -> String {
    soft_cut_detailed(text, policy).0
}

pub fn soft_cut_detailed(text: &str, policy: &TruncationPolicy) -> (String, SoftCut) {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= policy.max_words {
        return (text.to_string(), SoftCut::Unchanged);
    }
    let prefix = &words[..policy.max_words];
    let last_period = prefix.iter().rposition(|w| w.ends_with('.'));
    if let Some(pos) = last_period {
        let kept = pos + 1;
        if kept >= policy.min_soft_cut_words() {
            return (prefix[..kept].join(" "), SoftCut::SentenceBoundary(kept));
        }
    }
    let mut out = prefix.join(" ");
    if policy.append_period_on_hard_cut && !ends_with_terminal(&out) {
        out.push('.');
    }
    (out, SoftCut::Hard)
}

/// Whitespace-normalizes, soft-cuts, and ensures a non-empty result ends in
/// sentence-final punctuation. Idempotent.
pub fn enforce_answer_limit(text: &str, policy: &TruncationPolicy) -> (String, SoftCut) {
    let (cut, kind) = soft_cut_detailed(&normalize_whitespace(text), policy);
    let mut answer = normalize_whitespace(&cut);
    if !answer.is_empty() && !ends_with_terminal(&answer) {
        answer.push('.');
    }
    (answer, kind)
}

fn abbreviations() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        ABBREVIATIONS
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_abbreviation(word: &str) -> bool {
    abbreviations().contains(&word.to_lowercase())
}

/// Splits generated answer text into sentences.
///
/// A sentence ends at a word whose last character is `.`, `!` or `?`, unless
/// that word is on the abbreviation guard list. Joining the result with
/// single spaces reproduces the whitespace-normalized input.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for word in text.split_whitespace() {
        current.push(word);
        if matches!(word.chars().last(), Some('.' | '!' | '?')) && !is_abbreviation(word) {
            sentences.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        sentences.push(current.join(" "));
    }
    sentences
}

/// Whitespace-normalized form: words joined by single spaces.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
