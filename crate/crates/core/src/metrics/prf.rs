use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::corpus::{AlignmentLink, GoldAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScores {
    pub fn scaled(&self) -> Self {
        Self { precision: 100.0 * self.precision, recall: 100.0 * self.recall, f1: 100.0 * self.f1 }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// True/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn of<T: Ord>(predicted: &BTreeSet<T>, relevant: &BTreeSet<T>) -> Self {
        let tp = predicted.intersection(relevant).count();
        Self { tp, fp: predicted.len() - tp, fn_: relevant.len() - tp }
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// P/R/F1 from counts. An undefined ratio is 1 when nothing was missed
    /// and nothing spurious was predicted (empty prediction against empty
    /// gold), else 0.
    pub fn prf(&self) -> PrfScores {
        let ratio = |num: usize, den: usize, other_error: usize| {
            if den > 0 {
                num as f64 / den as f64
            } else if other_error == 0 {
                1.0
            } else {
                0.0
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp, self.fn_);
        let recall = ratio(self.tp, self.tp + self.fn_, self.fp);
        PrfScores { precision, recall, f1: f1(precision, recall) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Essential sentences only.
    Strict,
    /// Essential plus supplementary.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalLevel {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceEvalConfig {
    pub mode: EvalMode,
    pub level: EvalLevel,
}

/// Per-case counts over the union of predicted and gold cases; a gold case
/// without a prediction counts as an empty prediction.
fn per_case_counts<P, G, F>(
    preds: &BTreeMap<String, P>,
    gold: &BTreeMap<String, G>,
    mut count: F,
) -> Result<Vec<Counts>>
where
    F: FnMut(Option<&P>, &G) -> Counts,
{
    if let Some(id) = preds.keys().find(|id| !gold.contains_key(*id)) {
        return Err(MetricsError::MissingGold(id.clone()));
    }
    Ok(gold.iter().map(|(id, g)| count(preds.get(id), g)).collect())
}

pub(crate) fn aggregate(counts: &[Counts], level: EvalLevel) -> PrfScores {
    match level {
        EvalLevel::Micro => {
            let mut total = Counts::default();
            counts.iter().for_each(|c| total.add(*c));
            total.prf()
        }
        EvalLevel::Macro => {
            if counts.is_empty() {
                return Counts::default().prf();
            }
            let n = counts.len() as f64;
            let per_case: Vec<PrfScores> = counts.iter().map(Counts::prf).collect();
            PrfScores {
                precision: per_case.iter().map(|s| s.precision).sum::<f64>() / n,
                recall: per_case.iter().map(|s| s.recall).sum::<f64>() / n,
                f1: per_case.iter().map(|s| s.f1).sum::<f64>() / n,
            }
        }
    }
}

pub(crate) fn evidence_counts(
    preds: &BTreeMap<String, BTreeSet<usize>>,
    gold: &BTreeMap<String, GoldAnnotation>,
    mode: EvalMode,
) -> Result<Vec<(String, Counts)>> {
    let empty = BTreeSet::new();
    let counts = per_case_counts(preds, gold, |p, g| {
        let relevant = match mode {
            EvalMode::Strict => g.essential.clone(),
            EvalMode::Lenient => g.lenient_set(),
        };
        Counts::of(p.unwrap_or(&empty), &relevant)
    })?;
    Ok(gold.keys().cloned().zip(counts).collect())
}

/// Evidence identification P/R/F1.
///
/// Micro pools counts over cases; macro averages per-case P, R and F1
/// independently.
pub fn evidence_prf(
    preds: &BTreeMap<String, BTreeSet<usize>>,
    gold: &BTreeMap<String, GoldAnnotation>,
    cfg: EvidenceEvalConfig,
) -> Result<PrfScores> {
    let counts: Vec<Counts> = evidence_counts(preds, gold, cfg.mode)?.into_iter().map(|(_, c)| c).collect();
    Ok(aggregate(&counts, cfg.level))
}

fn pairs(links: &[AlignmentLink]) -> BTreeSet<(usize, usize)> {
    links
        .iter()
        .flat_map(|l| l.evidence.iter().map(move |&e| (l.answer_sentence, e)))
        .collect()
}

/// Micro P/R/F1 over `(answer_sentence, evidence_id)` pairs.
pub fn alignment_prf(
    preds: &BTreeMap<String, Vec<AlignmentLink>>,
    gold: &BTreeMap<String, Vec<AlignmentLink>>,
) -> Result<PrfScores> {
    let counts = per_case_counts(preds, gold, |p, g| {
        Counts::of(&p.map(|p| pairs(p)).unwrap_or_default(), &pairs(g))
    })?;
    Ok(aggregate(&counts, EvalLevel::Micro))
}
