//! Tokenizers matching the conventions of the standard metric scripts.

use std::sync::OnceLock;

use regex::Regex;

struct Rules13a {
    punct: Regex,
    period_comma_after_nondigit: Regex,
    period_comma_before_nondigit: Regex,
    dash_after_digit: Regex,
}

fn rules() -> &'static Rules13a {
    static RULES: OnceLock<Rules13a> = OnceLock::new();
    RULES.get_or_init(|| Rules13a {
        punct: Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(),
        period_comma_after_nondigit: Regex::new(r"([^0-9])([\.,])").unwrap(),
        period_comma_before_nondigit: Regex::new(r"([\.,])([^0-9])").unwrap(),
        dash_after_digit: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

/// The `13a` tokenizer of the WMT `mteval-v13a` script: splits off
/// punctuation, and periods/commas unless they sit between digits.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut line = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let r = rules();
    let line = format!(" {line} ");
    let line = r.punct.replace_all(&line, " ${1} ");
    let line = r.period_comma_after_nondigit.replace_all(&line, "${1} ${2} ");
    let line = r.period_comma_before_nondigit.replace_all(&line, " ${1} ${2}");
    let line = r.dash_after_digit.replace_all(&line, "${1} ${2} ");
    line.split_whitespace().map(str::to_string).collect()
}

/// Lowercased 13a tokens, the normalization used by BLEU and SARI here.
pub fn normalize_13a(text: &str) -> Vec<String> {
    tokenize_13a(&text.to_lowercase())
}

/// ROUGE tokenization: lowercase, every run of characters outside `[a-z0-9]`
/// becomes a separator.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit()))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}
