use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prf::{aggregate, evidence_counts, Counts, EvalLevel, EvalMode};
use super::{bleu, overall_score, rouge_lsum_pair, sari, sari_sentence, MetricsError, Result, GENERATE_CONSTITUENTS, INTERPRET_CONSTITUENTS};
use super::{alignment_prf, rouge_lsum};
use crate::corpus::{AlignmentLink, GoldAnnotation};

/// Scores for one evaluated submission. Values are on the 0–100 scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_case: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall: Option<f64>,
}

impl MetricReport {
    /// One header row of metric names and one row of values, 1 decimal.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(String, String)> =
            self.aggregate.iter().map(|(k, v)| (k.clone(), format!("{v:.1}"))).collect();
        if let Some(o) = self.overall {
            cols.push(("Overall".into(), format!("{o:.1}")));
        }
        let widths: Vec<usize> = cols.iter().map(|(k, v)| k.len().max(v.len())).collect();
        let mut out = String::new();
        let row = |cells: Vec<&str>| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(out, "{}", row(cols.iter().map(|(k, _)| k.as_str()).collect()));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        let _ = writeln!(out, "{}", row(cols.iter().map(|(_, v)| v.as_str()).collect()));
        out
    }
}

fn label(mode: EvalMode, level: EvalLevel) -> String {
    format!("{mode:?} {level:?}")
}

fn insert_prf(into: &mut BTreeMap<String, f64>, prefix: &str, c: &Counts) {
    let s = c.prf().scaled();
    into.insert(format!("{prefix} P"), s.precision);
    into.insert(format!("{prefix} R"), s.recall);
    into.insert(format!("{prefix} F1"), s.f1);
}

/// Evidence identification report: strict/lenient × micro/macro. The
/// overall value is the strict micro F1.
pub fn evidence_report(
    preds: &BTreeMap<String, BTreeSet<usize>>,
    gold: &BTreeMap<String, GoldAnnotation>,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for mode in [EvalMode::Strict, EvalMode::Lenient] {
        let counts = evidence_counts(preds, gold, mode)?;
        for (id, c) in &counts {
            insert_prf(report.per_case.entry(id.clone()).or_default(), &format!("{mode:?}"), c);
        }
        let only: Vec<Counts> = counts.into_iter().map(|(_, c)| c).collect();
        for level in [EvalLevel::Micro, EvalLevel::Macro] {
            let s = aggregate(&only, level).scaled();
            let prefix = label(mode, level);
            report.aggregate.insert(format!("{prefix} P"), s.precision);
            report.aggregate.insert(format!("{prefix} R"), s.recall);
            report.aggregate.insert(format!("{prefix} F1"), s.f1);
        }
    }
    report.overall = report.aggregate.get("Strict Micro F1").copied();
    Ok(report)
}

/// Alignment report: micro P/R/F1 over (answer sentence, evidence) pairs.
pub fn alignment_report(
    preds: &BTreeMap<String, Vec<AlignmentLink>>,
    gold: &BTreeMap<String, Vec<AlignmentLink>>,
) -> Result<MetricReport> {
    let total = alignment_prf(preds, gold)?.scaled();
    let mut report = MetricReport::default();
    for (id, g) in gold {
        let one_pred: BTreeMap<String, Vec<AlignmentLink>> =
            preds.get(id).map(|p| BTreeMap::from([(id.clone(), p.clone())])).unwrap_or_default();
        let one_gold = BTreeMap::from([(id.clone(), g.clone())]);
        let s = alignment_prf(&one_pred, &one_gold)?.scaled();
        let entry = report.per_case.entry(id.clone()).or_default();
        entry.insert("Micro P".into(), s.precision);
        entry.insert("Micro R".into(), s.recall);
        entry.insert("Micro F1".into(), s.f1);
    }
    report.aggregate.insert("Micro P".into(), total.precision);
    report.aggregate.insert("Micro R".into(), total.recall);
    report.aggregate.insert("Micro F1".into(), total.f1);
    report.overall = Some(total.f1);
    Ok(report)
}

/// Which free-text subtask is being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextTask {
    Interpret,
    Generate,
}

impl TextTask {
    pub fn constituents(self) -> &'static [&'static str] {
        match self {
            TextTask::Interpret => INTERPRET_CONSTITUENTS,
            TextTask::Generate => GENERATE_CONSTITUENTS,
        }
    }
}

/// One scored text item: case id, source, candidate, reference.
pub struct TextItem<'a> {
    pub case_id: &'a str,
    pub source: &'a str,
    pub candidate: &'a str,
    pub reference: &'a str,
}

/// BLEU, ROUGE-Lsum and SARI with an overall score when every constituent
/// resolves in the internal or sidecar values.
pub fn text_report(task: TextTask, items: &[TextItem<'_>], sidecar: &BTreeMap<String, f64>) -> Result<MetricReport> {
    let sources: Vec<String> = items.iter().map(|i| i.source.to_string()).collect();
    let candidates: Vec<String> = items.iter().map(|i| i.candidate.to_string()).collect();
    let references: Vec<String> = items.iter().map(|i| i.reference.to_string()).collect();
    let ref_sets: Vec<Vec<String>> = references.iter().map(|r| vec![r.clone()]).collect();

    let mut report = MetricReport::default();
    for item in items {
        let entry = report.per_case.entry(item.case_id.to_string()).or_default();
        entry.insert("BLEU".into(), bleu(&[item.candidate.to_string()], &[item.reference.to_string()])?);
        entry.insert("ROUGELsum".into(), 100.0 * rouge_lsum_pair(item.candidate, item.reference));
        entry.insert("SARI".into(), 100.0 * sari_sentence(item.source, item.candidate, &[item.reference.to_string()]));
    }
    report.aggregate.insert("BLEU".into(), bleu(&candidates, &references)?);
    report.aggregate.insert("ROUGELsum".into(), 100.0 * rouge_lsum(&candidates, &references)?);
    report.aggregate.insert("SARI".into(), sari(&sources, &candidates, &ref_sets)?);
    report.overall = match overall_score(&report.aggregate, sidecar, task.constituents()) {
        Ok(v) => Some(v),
        Err(MetricsError::MissingConstituent(_)) => None,
        Err(e) => return Err(e),
    };
    for (k, v) in sidecar {
        report.aggregate.entry(k.clone()).or_insert(*v);
    }
    Ok(report)
}

/// Reads a `{metric_name: value}` sidecar of externally computed metrics.
pub fn read_sidecar(path: &Path) -> Result<BTreeMap<String, f64>> {
    let raw = std::fs::read_to_string(path).map_err(|e| MetricsError::Sidecar(format!("{}: {e}", path.display())))?;
    let map: BTreeMap<String, f64> =
        serde_json::from_str(&raw).map_err(|e| MetricsError::Sidecar(format!("{}: {e}", path.display())))?;
    if let Some((k, v)) = map.iter().find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 100.0) {
        return Err(MetricsError::Sidecar(format!("{}: {k} = {v} is outside 0..=100", path.display())));
    }
    Ok(map)
}
