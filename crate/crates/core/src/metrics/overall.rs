use std::collections::BTreeMap;

use super::{MetricsError, Result};

/// Constituents of the question-interpretation overall score.
pub const INTERPRET_CONSTITUENTS: &[&str] = &["ROUGELsum", "BERTScore", "AlignScore", "MEDCON"];

/// Constituents of the answer-generation overall score.
pub const GENERATE_CONSTITUENTS: &[&str] = &["BLEU", "ROUGELsum", "SARI", "BERTScore", "AlignScore", "MEDCON"];

/// Unweighted mean of the named constituents on the 0–100 scale.
/// Internally computed values take precedence over sidecar values.
pub fn overall_score(
    internal: &BTreeMap<String, f64>,
    sidecar: &BTreeMap<String, f64>,
    constituents: &[&str],
) -> Result<f64> {
    if constituents.is_empty() {
        return Err(MetricsError::MissingConstituent(String::new()));
    }
    let mut sum = 0.0;
    for &name in constituents {
        let v = internal
            .get(name)
            .or_else(|| sidecar.get(name))
            .ok_or_else(|| MetricsError::MissingConstituent(name.to_string()))?;
        sum += v;
    }
    Ok(sum / constituents.len() as f64)
}
