use std::collections::{BTreeSet, HashMap};

use super::prf::f1;
use super::tokenize::rouge_tokens;
use super::{MetricsError, Result};
use crate::textproc::segment_sentences;

fn lcs_table(reference: &[String], candidate: &[String]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0usize; candidate.len() + 1]; reference.len() + 1];
    for i in 1..=reference.len() {
        for j in 1..=candidate.len() {
            t[i][j] = if reference[i - 1] == candidate[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

/// Reference positions of one longest common subsequence. Ties resolve the
/// same way as the reference ROUGE scorer's backtrack.
fn lcs_positions(reference: &[String], candidate: &[String]) -> Vec<usize> {
    let t = lcs_table(reference, candidate);
    let (mut i, mut j) = (reference.len(), candidate.len());
    let mut positions = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1] == candidate[j - 1] {
            positions.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j - 1] > t[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    positions.reverse();
    positions
}

/// Summary-level union-LCS F-measure between sentence-split texts.
fn summary_level_lcs(reference: &[Vec<String>], candidate: &[Vec<String>]) -> f64 {
    let m: usize = reference.iter().map(Vec::len).sum();
    let n: usize = candidate.iter().map(Vec::len).sum();
    if m == 0 || n == 0 {
        return 0.0;
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for tok in reference.iter().flatten() {
        *ref_counts.entry(tok).or_default() += 1;
    }
    for tok in candidate.iter().flatten() {
        *cand_counts.entry(tok).or_default() += 1;
    }
    let mut hits = 0usize;
    for sentence in reference {
        let union: BTreeSet<usize> = candidate.iter().flat_map(|c| lcs_positions(sentence, c)).collect();
        for pos in union {
            let tok = sentence[pos].as_str();
            let (Some(c), Some(r)) = (cand_counts.get_mut(tok), ref_counts.get_mut(tok)) else { continue };
            if *c > 0 && *r > 0 {
                hits += 1;
                *c -= 1;
                *r -= 1;
            }
        }
    }
    f1(hits as f64 / n as f64, hits as f64 / m as f64)
}

fn sentence_tokens(text: &str) -> Vec<Vec<String>> {
    segment_sentences(text).iter().map(|s| rouge_tokens(s)).collect()
}

/// ROUGE-Lsum F-measure of one candidate against one reference, in `[0, 1]`.
pub fn rouge_lsum_pair(candidate: &str, reference: &str) -> f64 {
    summary_level_lcs(&sentence_tokens(reference), &sentence_tokens(candidate))
}

/// Mean per-pair ROUGE-Lsum F-measure, in `[0, 1]`.
pub fn rouge_lsum(candidates: &[String], references: &[String]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = candidates.iter().zip(references).map(|(c, r)| rouge_lsum_pair(c, r)).sum();
    Ok(sum / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_disjoint() {
        let t = "Pain improved. Discharged home on aspirin.";
        assert!((rouge_lsum_pair(t, t) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_lsum_pair("alpha beta.", "gamma delta."), 0.0);
        assert_eq!(rouge_lsum_pair("", "gamma delta."), 0.0);
    }

    #[test]
    fn union_lcs_across_candidate_sentences() {
        // Reference sentence "a b c d" is covered by two candidate sentences.
        let score = rouge_lsum_pair("a b. c d.", "a b c d.");
        assert!((score - 1.0).abs() < 1e-12);
    }
}
