//! `{{name}}` template rendering and the text blocks stages feed into it.

use std::collections::BTreeMap;

use crate::corpus::{CaseRecord, FewShotExample};

use super::PipelineError;

/// Replaces every `{{name}}` with its value. Unknown or unclosed placeholders are errors.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> Result<String, PipelineError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PipelineError::Template("unclosed placeholder".into()))?;
        let name = after[..end].trim();
        let value = vars
            .get(name)
            .ok_or_else(|| PipelineError::Template(format!("unknown placeholder {{{{{name}}}}}")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// `[i] text` lines for the given note sentence ids.
pub fn numbered_sentences(case: &CaseRecord, indices: impl IntoIterator<Item = usize>) -> String {
    indices
        .into_iter()
        .filter_map(|i| case.sentence(i))
        .map(|s| format!("[{}] {}", s.index, s.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn numbered_note(case: &CaseRecord) -> String {
    numbered_sentences(case, 1..=case.note_len())
}

/// `[k] sentence` lines for answer sentences.
pub fn numbered_answer(sentences: &[String]) -> String {
    sentences
        .iter()
        .enumerate()
        .map(|(k, s)| format!("[{}] {s}", k + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn examples_block(examples: &[FewShotExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut out = String::from("Examples:\n");
    for (k, ex) in examples.iter().enumerate() {
        out.push_str(&format!("\nExample {}\nInput:\n{}\nOutput:\n{}\n", k + 1, ex.input.trim(), ex.output.trim()));
    }
    out
}
