//! Runs the cascade over a corpus and writes one submission file per requested stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    align_answer, filter_evidence, generate_answer, interpret_question, score_sentences, AlignmentMap, AnchorMode,
    EvidenceSelection, GeneratedAnswer, InterpretedQuery, PipelineError,
};
use crate::corpus::{
    write_submission, AlignmentEntry, AnswerEntry, CaseRecord, EvidenceEntry, PromptAssets, QueryEntry, Stage,
    Submission,
};
use crate::llm::{ChatBackend, GenerationConfig};
use crate::textproc::{segment_sentences, TruncationPolicy};

pub const REPORT_FILE: &str = "run_report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct StageSetup {
    pub assets: PromptAssets,
    pub config: GenerationConfig,
}

impl StageSetup {
    pub fn builtin(stage: Stage, model_id: &str) -> Self {
        Self { assets: PromptAssets::builtin(stage), config: GenerationConfig::for_stage(stage, model_id) }
    }
}

/// Where stage 4 takes its answer from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    /// The generated answer when stage 3 runs, otherwise the reference answer.
    #[default]
    Auto,
    Generated,
    /// The case's reference (clinician) answer, segmented into sentences.
    Reference,
}

impl FromStr for AnswerSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "generated" => Ok(Self::Generated),
            "reference" => Ok(Self::Reference),
            other => Err(format!("unknown answer source {other:?} (expected auto, generated or reference)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub interpret: StageSetup,
    pub score: StageSetup,
    pub generate: StageSetup,
    pub align: StageSetup,
    pub query_policy: TruncationPolicy,
    pub answer_policy: TruncationPolicy,
    pub anchor: AnchorMode,
    pub answer_source: AnswerSource,
    pub workers: usize,
}

impl PipelineConfig {
    pub fn builtin(model_id: &str) -> Self {
        Self {
            interpret: StageSetup::builtin(Stage::Interpret, model_id),
            score: StageSetup::builtin(Stage::Evidence, model_id),
            generate: StageSetup::builtin(Stage::Generate, model_id),
            align: StageSetup::builtin(Stage::Align, model_id),
            query_policy: TruncationPolicy::query(),
            answer_policy: TruncationPolicy::answer(),
            anchor: AnchorMode::default(),
            answer_source: AnswerSource::default(),
            workers: 1,
        }
    }

    pub fn setup_mut(&mut self, stage: Stage) -> &mut StageSetup {
        match stage {
            Stage::Interpret => &mut self.interpret,
            Stage::Evidence => &mut self.score,
            Stage::Generate => &mut self.generate,
            Stage::Align => &mut self.align,
        }
    }
}

/// Requested stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSet(BTreeSet<Stage>);

impl StageSet {
    pub fn all() -> Self {
        Self(Stage::ALL.into_iter().collect())
    }

    pub fn of(stages: &[Stage]) -> Self {
        Self(stages.iter().copied().collect())
    }

    pub fn contains(&self, stage: Stage) -> bool {
        self.0.contains(&stage)
    }

    pub fn iter(&self) -> impl Iterator<Item = Stage> + '_ {
        self.0.iter().copied()
    }
}

impl FromStr for StageSet {
    type Err = String;

    /// `all`, or a comma-separated list of stage numbers such as `1,2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let mut set = BTreeSet::new();
        for part in s.split(',') {
            let n: u8 = part.trim().parse().map_err(|_| format!("bad stage {part:?}"))?;
            set.insert(Stage::from_number(n).ok_or_else(|| format!("stage {n} is not in 1..=4"))?);
        }
        if set.is_empty() {
            return Err("no stages selected".into());
        }
        Ok(Self(set))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunEvent {
    pub case_id: String,
    pub stage: u8,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct CaseOutcome {
    pub case_id: String,
    pub query: Option<InterpretedQuery>,
    pub evidence: Option<EvidenceSelection>,
    pub answer: Option<GeneratedAnswer>,
    pub alignment: Option<AlignmentMap>,
    pub events: Vec<RunEvent>,
    pub error: Option<String>,
}

impl CaseOutcome {
    fn event(&mut self, stage: Stage, event: &str, detail: impl Into<String>) {
        self.events.push(RunEvent {
            case_id: self.case_id.clone(),
            stage: stage.number(),
            event: event.into(),
            detail: detail.into(),
        });
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub cases: usize,
    pub stages: Vec<u8>,
    pub failed_cases: Vec<String>,
    pub tiers: BTreeMap<String, usize>,
    pub fallbacks: usize,
    pub missing_transcript_keys: Vec<String>,
    pub events: Vec<RunEvent>,
    #[serde(skip)]
    pub outcomes: Vec<CaseOutcome>,
    #[serde(skip)]
    pub submissions: Vec<Submission>,
}

impl RunReport {
    pub fn submission(&self, stage: Stage) -> Option<&Submission> {
        self.submissions.iter().find(|s| s.stage() == stage)
    }

    pub fn events_of(&self, event: &str) -> impl Iterator<Item = &RunEvent> {
        let event = event.to_string();
        self.events.iter().filter(move |e| e.event == event)
    }
}

fn process_case(case: &CaseRecord, stages: &StageSet, cfg: &PipelineConfig, backend: &dyn ChatBackend) -> CaseOutcome {
    let mut out = CaseOutcome { case_id: case.case_id.clone(), ..Default::default() };
    if let Err(e) = run_case(case, stages, cfg, backend, &mut out) {
        let stage = e.1;
        out.event(stage, "error", e.0.to_string());
        out.error = Some(e.0.to_string());
    }
    out
}

fn run_case(
    case: &CaseRecord,
    stages: &StageSet,
    cfg: &PipelineConfig,
    backend: &dyn ChatBackend,
    out: &mut CaseOutcome,
) -> Result<(), (PipelineError, Stage)> {
    let align_generated = match cfg.answer_source {
        AnswerSource::Auto => stages.contains(Stage::Generate),
        AnswerSource::Generated => true,
        AnswerSource::Reference => false,
    };
    let need_generate = stages.contains(Stage::Generate) || (stages.contains(Stage::Align) && align_generated);
    let need_evidence = stages.contains(Stage::Evidence) || need_generate;
    let need_interpret = stages.contains(Stage::Interpret)
        || need_generate
        || (need_evidence && cfg.anchor == AnchorMode::InterpretedQuery);

    if need_interpret {
        let q = interpret_question(case, &cfg.interpret, cfg.query_policy.max_words, backend)
            .map_err(|e| (e, Stage::Interpret))?;
        out.event(Stage::Interpret, "query", if q.truncated { "truncated" } else { "ok" });
        if let Some(reason) = &q.fallback {
            out.event(Stage::Interpret, "fallback", reason.clone());
        }
        out.query = Some(q);
    }

    if need_evidence {
        let anchor = match cfg.anchor {
            AnchorMode::PatientNarrative if !case.patient_narrative.trim().is_empty() => case.patient_narrative.clone(),
            AnchorMode::PatientNarrative => case.patient_question.clone(),
            AnchorMode::ClinicianQuery => case
                .clinician_question
                .clone()
                .filter(|q| !q.trim().is_empty())
                .ok_or_else(|| (PipelineError::MissingClinicianQuery(case.case_id.clone()), Stage::Evidence))?,
            AnchorMode::InterpretedQuery => out
                .query
                .as_ref()
                .map(|q| q.query.clone())
                .ok_or_else(|| (PipelineError::MissingInterpretedQuery(case.case_id.clone()), Stage::Evidence))?,
        };
        let scores = score_sentences(case, &anchor, &cfg.score, backend).map_err(|e| (e, Stage::Evidence))?;
        let selection = filter_evidence(&case.case_id, scores.as_deref(), case.note_len());
        out.event(Stage::Evidence, "tier", selection.tier.to_string());
        if let Some(reason) = &selection.fallback {
            out.event(Stage::Evidence, "fallback", reason.clone());
        }
        out.evidence = Some(selection);
    }

    if need_generate {
        let query = out.query.as_ref().expect("stage 1 ran");
        let evidence = out.evidence.as_ref().expect("stage 2 ran");
        let answer = generate_answer(case, query, evidence, &cfg.generate, &cfg.answer_policy, backend)
            .map_err(|e| (e, Stage::Generate))?;
        if answer.soft_cut_applied {
            out.event(Stage::Generate, "soft_cut", format!("{} sentences kept", answer.answer_sentences.len()));
        }
        if let Some(reason) = &answer.fallback {
            out.event(Stage::Generate, "fallback", reason.clone());
        }
        out.answer = Some(answer);
    }

    if stages.contains(Stage::Align) {
        let sentences = if align_generated {
            out.answer.as_ref().map(|a| a.answer_sentences.clone()).unwrap_or_default()
        } else {
            case.gold
                .as_ref()
                .and_then(|g| g.reference_answer.as_deref())
                .map(segment_sentences)
                .unwrap_or_default()
        };
        if sentences.is_empty() {
            return Err((PipelineError::MissingAnswer(case.case_id.clone()), Stage::Align));
        }
        let fallback_evidence: Vec<usize> = match &out.evidence {
            Some(sel) => sel.indices.clone(),
            None => (1..=case.note_len().min(3)).collect(),
        };
        let aligned =
            align_answer(case, &sentences, &fallback_evidence, &cfg.align, backend).map_err(|e| (e, Stage::Align))?;
        if aligned.reprompted {
            out.event(Stage::Align, "reprompt", "malformed alignment JSON");
        }
        for w in &aligned.warnings {
            out.event(Stage::Align, "warning", w.clone());
        }
        if let Some(reason) = &aligned.fallback {
            out.event(Stage::Align, "fallback", reason.clone());
        }
        out.alignment = Some(aligned.map);
    }
    Ok(())
}

/// Runs the requested stages over every case.
///
/// Cases are independent: a failing case is reported and skipped in the
/// submissions while the rest continue. Outputs are sorted by `case_id`, so
/// a fixed corpus and a fixed transcript give byte-identical files. With
/// `out_dir`, one file per requested stage plus [`REPORT_FILE`] is written.
pub fn run_pipeline(
    corpus: &[CaseRecord],
    stages: &StageSet,
    cfg: &PipelineConfig,
    backend: &dyn ChatBackend,
    out_dir: Option<&Path>,
) -> Result<RunReport, PipelineError> {
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(corpus.len()));
    let workers = cfg.workers.clamp(1, corpus.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(case) = corpus.get(i) else { break };
                let outcome = process_case(case, stages, cfg, backend);
                results.lock().unwrap().push(outcome);
            });
        }
    });
    let mut outcomes = results.into_inner().unwrap();
    outcomes.sort_by(|a, b| a.case_id.cmp(&b.case_id));

    let submissions: Vec<Submission> = stages.iter().map(|stage| collect_submission(stage, &outcomes)).collect();
    let mut tiers = BTreeMap::new();
    for sel in outcomes.iter().filter_map(|o| o.evidence.as_ref()) {
        *tiers.entry(sel.tier.to_string()).or_insert(0) += 1;
    }
    let events: Vec<RunEvent> = outcomes.iter().flat_map(|o| o.events.iter().cloned()).collect();
    let report = RunReport {
        cases: corpus.len(),
        stages: stages.iter().map(Stage::number).collect(),
        failed_cases: outcomes.iter().filter(|o| o.error.is_some()).map(|o| o.case_id.clone()).collect(),
        tiers,
        fallbacks: events.iter().filter(|e| e.event == "fallback").count(),
        missing_transcript_keys: backend.missing_transcript_keys(),
        events,
        outcomes,
        submissions,
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Output(format!("{}: {e}", dir.display())))?;
        for sub in &report.submissions {
            write_submission(sub, dir.join(sub.stage().file_name()))
                .map_err(|e| PipelineError::Output(e.to_string()))?;
        }
        let mut body = serde_json::to_string_pretty(&report).expect("report serializes");
        body.push('\n');
        fs::write(dir.join(REPORT_FILE), body).map_err(|e| PipelineError::Output(e.to_string()))?;
    }
    Ok(report)
}

fn collect_submission(stage: Stage, outcomes: &[CaseOutcome]) -> Submission {
    match stage {
        Stage::Interpret => Submission::Queries(
            outcomes
                .iter()
                .filter_map(|o| o.query.as_ref())
                .map(|q| QueryEntry { case_id: q.case_id.clone(), query: q.query.clone() })
                .collect(),
        ),
        Stage::Evidence => Submission::Evidence(
            outcomes
                .iter()
                .filter_map(|o| o.evidence.as_ref())
                .map(|e| EvidenceEntry { case_id: e.case_id.clone(), evidence: e.indices.clone(), tier: e.tier })
                .collect(),
        ),
        Stage::Generate => Submission::Answers(
            outcomes
                .iter()
                .filter_map(|o| o.answer.as_ref())
                .map(|a| AnswerEntry { case_id: a.case_id.clone(), answer: a.answer.clone() })
                .collect(),
        ),
        Stage::Align => Submission::Alignments(
            outcomes
                .iter()
                .filter_map(|o| o.alignment.as_ref())
                .map(|m| AlignmentEntry { case_id: m.case_id.clone(), alignment: m.links.clone() })
                .collect(),
        ),
    }
}
