use std::collections::HashMap;

use super::tokenize::normalize_13a;
use super::{MetricsError, Result};

const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 on the 0–100 scale, one reference per candidate.
///
/// Lowercased 13a tokens, uniform weights, clipped n-gram counts pooled over
/// the corpus, brevity penalty, and add-one smoothing on the 2- to 4-gram
/// precisions. Zero unigram overlap gives 0.
pub fn bleu(candidates: &[String], references: &[String]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch(candidates.len(), references.len()));
    }
    let mut correct = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut sys_len, mut ref_len) = (0usize, 0usize);
    for (cand, reference) in candidates.iter().zip(references) {
        let c = normalize_13a(cand);
        let r = normalize_13a(reference);
        sys_len += c.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&r, n);
            for (gram, count) in ngram_counts(&c, n) {
                correct[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if total[0] == 0 || correct[0] == 0 {
        return Ok(0.0);
    }
    let log_sum: f64 = (0..MAX_ORDER)
        .map(|i| {
            let (c, t) = if i == 0 { (correct[i], total[i]) } else { (correct[i] + 1, total[i] + 1) };
            (c as f64 / t as f64).ln()
        })
        .sum();
    let brevity = if sys_len < ref_len { (1.0 - ref_len as f64 / sys_len as f64).exp() } else { 1.0 };
    Ok(100.0 * brevity * (log_sum / MAX_ORDER as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identity_is_100() {
        let texts = s(&["The ejection fraction was 25%.", "Ok."]);
        assert!((bleu(&texts, &texts).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(bleu(&s(&["alpha beta"]), &s(&["gamma delta"])).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(bleu(&s(&["a"]), &[]), Err(MetricsError::LengthMismatch(1, 0)));
    }
}
