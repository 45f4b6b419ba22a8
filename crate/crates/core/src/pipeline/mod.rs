//! The four cascaded stages and the orchestrator that wires them.
//!
//! interpret → score + filter → generate → align. Every stage has a
//! model-free fallback, so a case always produces schema-valid output unless
//! its inputs are missing.

mod align;
mod evidence;
mod generate;
mod interpret;
mod orchestrator;
pub mod prompts;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::corpus::{AlignmentLink, AlignmentMap, Stage, Tier};
pub use align::{align_answer, parse_alignment, AlignOutput, AlignmentParse};
pub use evidence::{filter_evidence, parse_scores, score_sentences, ScoreFailure};
pub use generate::generate_answer;
pub use interpret::interpret_question;
pub use orchestrator::{
    run_pipeline, AnswerSource, CaseOutcome, PipelineConfig, RunEvent, RunReport, StageSetup, StageSet,
    REPORT_FILE,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("case {0} has no clinician_question for the clinician-query anchor")]
    MissingClinicianQuery(String),
    #[error("case {0} has no stage-1 query for the interpreted-query anchor")]
    MissingInterpretedQuery(String),
    #[error("case {0} has no answer to align (no generated answer and no reference answer)")]
    MissingAnswer(String),
    #[error("case {0} has an empty patient question and narrative")]
    EmptyQuestion(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("writing outputs: {0}")]
    Output(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpretedQuery {
    pub case_id: String,
    pub query: String,
    pub truncated: bool,
    /// Why the model output was not used, if it was not.
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub index: usize,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSelection {
    pub case_id: String,
    /// Ascending note-sentence ids.
    pub indices: Vec<usize>,
    pub tier: Tier,
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub case_id: String,
    pub answer: String,
    pub answer_sentences: Vec<String>,
    pub soft_cut_applied: bool,
    pub fallback: Option<String>,
}

/// Text that drives evidence scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorMode {
    PatientNarrative,
    ClinicianQuery,
    #[default]
    InterpretedQuery,
}

impl FromStr for AnchorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patient-narrative" => Ok(Self::PatientNarrative),
            "clinician-query" => Ok(Self::ClinicianQuery),
            "interpreted-query" => Ok(Self::InterpretedQuery),
            other => Err(format!(
                "unknown anchor {other:?} (expected patient-narrative, clinician-query or interpreted-query)"
            )),
        }
    }
}

impl fmt::Display for AnchorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PatientNarrative => "patient-narrative",
            Self::ClinicianQuery => "clinician-query",
            Self::InterpretedQuery => "interpreted-query",
        })
    }
}
