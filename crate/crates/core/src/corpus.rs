//! Case records, gold annotations, prompt assets and per-stage submission files.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::textproc::count_words;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record {case_id}: {reason}")]
    MalformedRecord { case_id: String, reason: String },
    #[error("duplicate case_id {0}")]
    DuplicateCaseId(String),
    #[error("case {case_id}: sentence index {index} outside 1..={note_len}")]
    IndexOutOfRange { case_id: String, index: usize, note_len: usize },
    #[error("case {case_id}: sentence {index} labelled both essential and supplementary")]
    DuplicateLabel { case_id: String, index: usize },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    if source.kind() == std::io::ErrorKind::NotFound {
        CorpusError::MissingFile(path.to_path_buf())
    } else {
        CorpusError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteSentence {
    pub index: usize,
    pub text: String,
}

/// One answer sentence and the note sentences cited for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentLink {
    pub answer_sentence: usize,
    pub evidence: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub case_id: String,
    pub links: Vec<AlignmentLink>,
}

impl AlignmentMap {
    /// `(answer_sentence, evidence_id)` pairs, the unit the alignment scorer counts.
    pub fn pairs(&self) -> BTreeSet<(usize, usize)> {
        self.links
            .iter()
            .flat_map(|l| l.evidence.iter().map(move |&e| (l.answer_sentence, e)))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub essential: BTreeSet<usize>,
    pub supplementary: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_alignment: Option<Vec<AlignmentLink>>,
}

impl GoldAnnotation {
    /// Essential plus supplementary sentences.
    pub fn lenient_set(&self) -> BTreeSet<usize> {
        self.essential.union(&self.supplementary).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub patient_narrative: String,
    pub patient_question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clinician_question: Option<String>,
    pub note: Vec<NoteSentence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldAnnotation>,
}

impl CaseRecord {
    pub fn note_len(&self) -> usize {
        self.note.len()
    }

    pub fn sentence(&self, index: usize) -> Option<&NoteSentence> {
        index.checked_sub(1).and_then(|i| self.note.get(i))
    }

    pub fn note_text(&self) -> String {
        self.note.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    /// Checks every record invariant except corpus-level uniqueness.
    pub fn validate(&self) -> Result<()> {
        let malformed = |reason: String| CorpusError::MalformedRecord {
            case_id: self.case_id.clone(),
            reason,
        };
        if self.case_id.trim().is_empty() {
            return Err(malformed("empty case_id".into()));
        }
        if self.note.is_empty() {
            return Err(malformed("note has no sentences".into()));
        }
        for (pos, s) in self.note.iter().enumerate() {
            if s.index != pos + 1 {
                return Err(malformed(format!(
                    "note indices must run 1..N in order; position {} has index {}",
                    pos + 1,
                    s.index
                )));
            }
            if s.text.trim().is_empty() {
                return Err(malformed(format!("sentence {} is empty", s.index)));
            }
            if s.text.contains(['\n', '\r']) {
                return Err(malformed(format!("sentence {} contains a line break", s.index)));
            }
        }
        if let Some(gold) = &self.gold {
            let n = self.note_len();
            for &index in gold.essential.iter().chain(&gold.supplementary) {
                if index == 0 || index > n {
                    return Err(CorpusError::IndexOutOfRange {
                        case_id: self.case_id.clone(),
                        index,
                        note_len: n,
                    });
                }
            }
            if let Some(&index) = gold.essential.intersection(&gold.supplementary).next() {
                return Err(CorpusError::DuplicateLabel { case_id: self.case_id.clone(), index });
            }
            if let Some(links) = &gold.reference_alignment {
                for link in links {
                    if let Some(&index) = link.evidence.iter().find(|&&e| e == 0 || e > n) {
                        return Err(CorpusError::IndexOutOfRange {
                            case_id: self.case_id.clone(),
                            index,
                            note_len: n,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Source of case records. The JSON corpus format is the only built-in one;
/// other distributions plug in by implementing this.
pub trait CorpusReader {
    fn read(&self, path: &Path) -> Result<Vec<CaseRecord>>;
}

pub struct JsonCorpusReader;

impl CorpusReader for JsonCorpusReader {
    fn read(&self, path: &Path) -> Result<Vec<CaseRecord>> {
        let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        parse_corpus(&raw)
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CaseRecord>> {
    JsonCorpusReader.read(path.as_ref())
}

/// Parses and validates a corpus document.
pub fn parse_corpus(raw: &str) -> Result<Vec<CaseRecord>> {
    let unknown = |reason: String| CorpusError::MalformedRecord { case_id: "<corpus>".into(), reason };
    let doc: Value = serde_json::from_str(raw).map_err(|e| unknown(e.to_string()))?;
    let Value::Array(items) = doc else {
        return Err(unknown("top level must be an array of cases".into()));
    };
    let mut seen = HashSet::new();
    let mut cases = Vec::with_capacity(items.len());
    for (pos, item) in items.into_iter().enumerate() {
        let case_id = item
            .get("case_id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("<case #{}>", pos + 1));
        let case: CaseRecord = serde_json::from_value(item).map_err(|e| {
            CorpusError::MalformedRecord { case_id: case_id.clone(), reason: e.to_string() }
        })?;
        case.validate()?;
        if !seen.insert(case.case_id.clone()) {
            return Err(CorpusError::DuplicateCaseId(case.case_id));
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Pipeline stage, numbered as in the shared task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Interpret,
    Evidence,
    Generate,
    Align,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Interpret, Stage::Evidence, Stage::Generate, Stage::Align];

    pub fn number(self) -> u8 {
        match self {
            Stage::Interpret => 1,
            Stage::Evidence => 2,
            Stage::Generate => 3,
            Stage::Align => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.number() == n)
    }

    /// Default submission file name inside an output directory.
    pub fn file_name(self) -> &'static str {
        match self {
            Stage::Interpret => "stage1_queries.json",
            Stage::Evidence => "stage2_evidence.json",
            Stage::Generate => "stage3_answers.json",
            Stage::Align => "stage4_alignment.json",
        }
    }

    /// Prompt asset name for the stage.
    pub fn asset_name(self) -> &'static str {
        match self {
            Stage::Interpret => "interpret",
            Stage::Evidence => "score",
            Stage::Generate => "generate",
            Stage::Align => "align",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage{}", self.number())
    }
}

/// Which filter tier produced an evidence set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Strict,
    Lenient,
    Fallback,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Strict => "strict",
            Tier::Lenient => "lenient",
            Tier::Fallback => "fallback",
        })
    }
}

pub const MAX_QUERY_WORDS: usize = 15;
pub const MAX_ANSWER_WORDS: usize = 75;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub case_id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    pub case_id: String,
    pub evidence: Vec<usize>,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEntry {
    pub case_id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub case_id: String,
    pub alignment: Vec<AlignmentLink>,
}

/// Contents of one stage's submission file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Submission {
    Queries(Vec<QueryEntry>),
    Evidence(Vec<EvidenceEntry>),
    Answers(Vec<AnswerEntry>),
    Alignments(Vec<AlignmentEntry>),
}

impl Submission {
    pub fn stage(&self) -> Stage {
        match self {
            Submission::Queries(_) => Stage::Interpret,
            Submission::Evidence(_) => Stage::Evidence,
            Submission::Answers(_) => Stage::Generate,
            Submission::Alignments(_) => Stage::Align,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Submission::Queries(v) => v.len(),
            Submission::Evidence(v) => v.len(),
            Submission::Answers(v) => v.len(),
            Submission::Alignments(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn case_ids(&self) -> Vec<&str> {
        match self {
            Submission::Queries(v) => v.iter().map(|e| e.case_id.as_str()).collect(),
            Submission::Evidence(v) => v.iter().map(|e| e.case_id.as_str()).collect(),
            Submission::Answers(v) => v.iter().map(|e| e.case_id.as_str()).collect(),
            Submission::Alignments(v) => v.iter().map(|e| e.case_id.as_str()).collect(),
        }
    }

    /// Per-stage schema rules that need no corpus.
    pub fn validate(&self) -> Result<()> {
        let bad = |case_id: &str, why: String| {
            Err(CorpusError::SchemaViolation(format!("{} case {case_id}: {why}", self.stage())))
        };
        let mut seen = HashSet::new();
        for id in self.case_ids() {
            if id.trim().is_empty() {
                return bad(id, "empty case_id".into());
            }
            if !seen.insert(id) {
                return bad(id, "case listed twice".into());
            }
        }
        match self {
            Submission::Queries(v) => {
                for e in v {
                    let n = count_words(&e.query);
                    if n == 0 || n > MAX_QUERY_WORDS {
                        return bad(&e.case_id, format!("query has {n} words, expected 1..={MAX_QUERY_WORDS}"));
                    }
                }
            }
            Submission::Evidence(v) => {
                for e in v {
                    if e.evidence.is_empty() {
                        return bad(&e.case_id, "empty evidence list".into());
                    }
                    if e.evidence.contains(&0) {
                        return bad(&e.case_id, "sentence ids are 1-based".into());
                    }
                    if e.evidence.windows(2).any(|w| w[0] >= w[1]) {
                        return bad(&e.case_id, "evidence ids must be strictly ascending".into());
                    }
                }
            }
            Submission::Answers(v) => {
                for e in v {
                    let n = count_words(&e.answer);
                    if n == 0 || n > MAX_ANSWER_WORDS {
                        return bad(&e.case_id, format!("answer has {n} words, expected 1..={MAX_ANSWER_WORDS}"));
                    }
                }
            }
            Submission::Alignments(v) => {
                for e in v {
                    let mut ids = HashSet::new();
                    for link in &e.alignment {
                        if link.answer_sentence == 0 || !ids.insert(link.answer_sentence) {
                            return bad(&e.case_id, format!("bad or repeated answer_sentence {}", link.answer_sentence));
                        }
                        if link.evidence.is_empty() || link.evidence.contains(&0) {
                            return bad(&e.case_id, format!("answer_sentence {} has invalid evidence", link.answer_sentence));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that every entry names a known case and cites only existing sentences.
    pub fn validate_against(&self, corpus: &[CaseRecord]) -> Result<()> {
        self.validate()?;
        for id in self.case_ids() {
            let Some(case) = corpus.iter().find(|c| c.case_id == id) else {
                return Err(CorpusError::SchemaViolation(format!("unknown case_id {id}")));
            };
            let n = case.note_len();
            let cited: Vec<usize> = match self {
                Submission::Evidence(v) => v.iter().filter(|e| e.case_id == id).flat_map(|e| e.evidence.clone()).collect(),
                Submission::Alignments(v) => v
                    .iter()
                    .filter(|e| e.case_id == id)
                    .flat_map(|e| e.alignment.iter().flat_map(|l| l.evidence.iter().copied()))
                    .collect(),
                _ => Vec::new(),
            };
            if let Some(&index) = cited.iter().find(|&&i| i > n) {
                return Err(CorpusError::IndexOutOfRange { case_id: id.to_string(), index, note_len: n });
            }
        }
        Ok(())
    }

    /// Pretty-printed JSON array, as written to submission files.
    pub fn to_json(&self) -> serde_json::Result<String> {
        match self {
            Submission::Queries(v) => serde_json::to_string_pretty(v),
            Submission::Evidence(v) => serde_json::to_string_pretty(v),
            Submission::Answers(v) => serde_json::to_string_pretty(v),
            Submission::Alignments(v) => serde_json::to_string_pretty(v),
        }
    }

    /// Parses a submission document for a known stage.
    pub fn from_json(stage: Stage, raw: &str) -> Result<Self> {
        let schema = |e: serde_json::Error| CorpusError::SchemaViolation(format!("{stage}: {e}"));
        let sub = match stage {
            Stage::Interpret => Submission::Queries(serde_json::from_str(raw).map_err(schema)?),
            Stage::Evidence => Submission::Evidence(serde_json::from_str(raw).map_err(schema)?),
            Stage::Generate => Submission::Answers(serde_json::from_str(raw).map_err(schema)?),
            Stage::Align => Submission::Alignments(serde_json::from_str(raw).map_err(schema)?),
        };
        Ok(sub)
    }

    /// Guesses the stage from the keys of the first entry.
    pub fn detect_stage(raw: &str) -> Result<Option<Stage>> {
        let doc: Value = serde_json::from_str(raw).map_err(|e| CorpusError::SchemaViolation(e.to_string()))?;
        let Value::Array(items) = doc else {
            return Err(CorpusError::SchemaViolation("submission must be a JSON array".into()));
        };
        let Some(first) = items.first() else { return Ok(None) };
        let has = |k: &str| first.get(k).is_some();
        Ok(if has("query") {
            Some(Stage::Interpret)
        } else if has("evidence") {
            Some(Stage::Evidence)
        } else if has("answer") {
            Some(Stage::Generate)
        } else if has("alignment") {
            Some(Stage::Align)
        } else {
            None
        })
    }
}

/// Validates and writes a submission file.
pub fn write_submission(submission: &Submission, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    submission.validate()?;
    let mut body = submission
        .to_json()
        .map_err(|e| CorpusError::SchemaViolation(e.to_string()))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| io_err(path, e))
}

pub fn read_submission(stage: Stage, path: impl AsRef<Path>) -> Result<Submission> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let sub = Submission::from_json(stage, &raw)?;
    sub.validate()?;
    Ok(sub)
}

/// One few-shot demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub input: String,
    pub output: String,
}

/// Persona, template and demonstrations for one stage's prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAssets {
    pub template_id: String,
    pub system_persona: String,
    pub template: String,
    pub few_shot_examples: Vec<FewShotExample>,
}

macro_rules! builtin_asset {
    ($name:literal) => {
        (
            include_str!(concat!("../assets/prompts/", $name, ".persona.txt")),
            include_str!(concat!("../assets/prompts/", $name, ".template.txt")),
            include_str!(concat!("../assets/prompts/", $name, ".examples.json")),
        )
    };
}

impl PromptAssets {
    /// Number of demonstrations the stage's prompt must carry, if fixed.
    pub fn required_examples(stage: Stage) -> Option<usize> {
        match stage {
            Stage::Interpret => Some(3),
            Stage::Generate => Some(0),
            Stage::Evidence | Stage::Align => None,
        }
    }

    /// Built-in assets shipped with the crate.
    pub fn builtin(stage: Stage) -> Self {
        let (persona, template, examples) = match stage {
            Stage::Interpret => builtin_asset!("interpret"),
            Stage::Evidence => builtin_asset!("score"),
            Stage::Generate => builtin_asset!("generate"),
            Stage::Align => builtin_asset!("align"),
        };
        Self {
            template_id: format!("builtin/{}", stage.asset_name()),
            system_persona: persona.trim().to_string(),
            template: template.to_string(),
            few_shot_examples: serde_json::from_str(examples).expect("built-in examples are valid JSON"),
        }
    }

    /// Loads `<stage>.persona.txt`, `<stage>.template.txt` and `<stage>.examples.json`
    /// from `dir`, taking the built-in version of any file that is absent.
    pub fn load(dir: &Path, stage: Stage) -> Result<Self> {
        let mut assets = Self::builtin(stage);
        let name = stage.asset_name();
        let read = |suffix: &str| -> Result<Option<String>> {
            let path = dir.join(format!("{name}.{suffix}"));
            match fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(io_err(&path, e)),
            }
        };
        if let Some(p) = read("persona.txt")? {
            assets.system_persona = p.trim().to_string();
        }
        if let Some(t) = read("template.txt")? {
            assets.template = t;
            assets.template_id = format!("{}/{name}", dir.display());
        }
        if let Some(ex) = read("examples.json")? {
            assets.few_shot_examples = serde_json::from_str(&ex).map_err(|e| CorpusError::MalformedRecord {
                case_id: format!("{name}.examples.json"),
                reason: e.to_string(),
            })?;
        }
        assets.check(stage)?;
        Ok(assets)
    }

    pub fn check(&self, stage: Stage) -> Result<()> {
        if let Some(n) = Self::required_examples(stage) {
            if self.few_shot_examples.len() != n {
                return Err(CorpusError::SchemaViolation(format!(
                    "{} prompt needs exactly {n} few-shot examples, found {}",
                    stage.asset_name(),
                    self.few_shot_examples.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case_json(id: &str, gold: &str) -> String {
        format!(
            r#"{{"case_id":"{id}","patient_narrative":"n","patient_question":"q",
               "note":[{{"index":1,"text":"a."}},{{"index":2,"text":"b."}},{{"index":3,"text":"c."}}]{gold}}}"#
        )
    }

    #[test]
    fn loads_single_case() {
        let cases = parse_corpus(&format!("[{}]", case_json("c1", ""))).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].note_len(), 3);
    }

    #[test]
    fn rejects_overlapping_labels() {
        let raw = format!("[{}]", case_json("c1", r#","gold":{"essential":[2],"supplementary":[2]}"#));
        assert!(matches!(parse_corpus(&raw), Err(CorpusError::DuplicateLabel { index: 2, .. })));
    }

    #[test]
    fn rejects_duplicate_case_ids() {
        let raw = format!("[{},{}]", case_json("c1", ""), case_json("c1", ""));
        assert!(matches!(parse_corpus(&raw), Err(CorpusError::DuplicateCaseId(id)) if id == "c1"));
    }

    #[test]
    fn rejects_out_of_range_gold() {
        let raw = format!("[{}]", case_json("c1", r#","gold":{"essential":[4],"supplementary":[]}"#));
        assert!(matches!(parse_corpus(&raw), Err(CorpusError::IndexOutOfRange { index: 4, .. })));
    }

    #[test]
    fn rejects_gapped_indices() {
        let raw = r#"[{"case_id":"x","patient_narrative":"n","patient_question":"q",
            "note":[{"index":1,"text":"a."},{"index":3,"text":"b."}]}]"#;
        assert!(matches!(parse_corpus(raw), Err(CorpusError::MalformedRecord { .. })));
    }

    #[test]
    fn stage3_writer_rejects_long_answer() {
        let answer = vec!["word"; 80].join(" ");
        assert_eq!(count_words(&answer), 80);
        let sub = Submission::Answers(vec![AnswerEntry { case_id: "c1".into(), answer }]);
        let dir = tempfile::tempdir().unwrap();
        let err = write_submission(&sub, dir.path().join("s3.json")).unwrap_err();
        assert!(matches!(err, CorpusError::SchemaViolation(_)));
    }

    #[test]
    fn empty_submission_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s4.json");
        write_submission(&Submission::Alignments(vec![]), &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().trim(), "[]");
        assert!(read_submission(Stage::Align, &path).unwrap().is_empty());
    }

    #[test]
    fn builtin_assets_satisfy_example_counts() {
        for stage in Stage::ALL {
            PromptAssets::builtin(stage).check(stage).unwrap();
        }
    }
}
