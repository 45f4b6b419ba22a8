//! Shared-task scoring: evidence and alignment P/R/F1, BLEU, ROUGE-Lsum,
//! SARI, and the unweighted overall score.
//!
//! P/R/F1 values are fractions in `[0, 1]`; reports scale them by 100.
//! [`bleu`] and [`sari`] are on the 0–100 scale, [`rouge_lsum`] on `[0, 1]`.

mod bleu;
mod overall;
mod prf;
mod report;
mod rouge;
mod sari;
pub mod tokenize;

use std::collections::BTreeMap;

use thiserror::Error;

pub use bleu::bleu;
pub use overall::{overall_score, GENERATE_CONSTITUENTS, INTERPRET_CONSTITUENTS};
pub use prf::{alignment_prf, evidence_prf, Counts, EvalLevel, EvalMode, EvidenceEvalConfig, PrfScores};
pub use report::{
    alignment_report, evidence_report, read_sidecar, text_report, MetricReport, TextItem, TextTask,
};
pub use rouge::{rouge_lsum, rouge_lsum_pair};
pub use sari::{sari, sari_sentence};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no gold annotation for case {0}")]
    MissingGold(String),
    #[error("length mismatch: {0} candidates vs {1} references")]
    LengthMismatch(usize, usize),
    #[error("no value for constituent metric {0}")]
    MissingConstituent(String),
    #[error("sidecar file: {0}")]
    Sidecar(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Aligned generation-evaluation inputs. `references[i]` may hold several references.
#[derive(Debug, Clone, Default)]
pub struct TextBatch {
    pub sources: Vec<String>,
    pub candidates: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// A corpus-level text metric on the 0–100 scale.
pub trait TextMetric: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, batch: &TextBatch) -> Result<f64>;
}

fn first_references(batch: &TextBatch) -> Vec<String> {
    batch.references.iter().map(|r| r.first().cloned().unwrap_or_default()).collect()
}

struct Bleu;
struct RougeLsum;
struct Sari;

impl TextMetric for Bleu {
    fn name(&self) -> &str {
        "BLEU"
    }

    fn score(&self, batch: &TextBatch) -> Result<f64> {
        bleu(&batch.candidates, &first_references(batch))
    }
}

impl TextMetric for RougeLsum {
    fn name(&self) -> &str {
        "ROUGELsum"
    }

    fn score(&self, batch: &TextBatch) -> Result<f64> {
        Ok(100.0 * rouge_lsum(&batch.candidates, &first_references(batch))?)
    }
}

impl TextMetric for Sari {
    fn name(&self) -> &str {
        "SARI"
    }

    fn score(&self, batch: &TextBatch) -> Result<f64> {
        sari(&batch.sources, &batch.candidates, &batch.references)
    }
}

/// Text metrics by name.
pub struct MetricRegistry {
    metrics: BTreeMap<String, Box<dyn TextMetric>>,
}

impl MetricRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = Self { metrics: BTreeMap::new() };
        reg.register(Box::new(Bleu));
        reg.register(Box::new(RougeLsum));
        reg.register(Box::new(Sari));
        reg
    }

    pub fn register(&mut self, metric: Box<dyn TextMetric>) {
        self.metrics.insert(metric.name().to_string(), metric);
    }

    pub fn get(&self, name: &str) -> Option<&dyn TextMetric> {
        self.metrics.get(name).map(|m| m.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.metrics.keys().map(String::as_str).collect()
    }
}

impl Default for MetricRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
