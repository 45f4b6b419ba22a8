//! SARI: mean of add-F1, keep-F1 and deletion precision over 1- to 4-grams.
//!
//! Follows the widely used reference implementation, including its counting
//! conventions: source and candidate n-gram counts are multiplied by the
//! number of references, and an empty token list is treated as a single
//! empty token.

use std::collections::{HashMap, HashSet};

use super::tokenize::normalize_13a;
use super::{MetricsError, Result};

type Counter = HashMap<String, usize>;

fn counter<'a>(grams: impl IntoIterator<Item = &'a String>, scale: usize) -> Counter {
    let mut c = Counter::new();
    for g in grams {
        *c.entry(g.clone()).or_default() += scale;
    }
    c
}

/// Multiset intersection (minimum count, positive only).
fn and(a: &Counter, b: &Counter) -> Counter {
    a.iter()
        .filter_map(|(k, &v)| {
            let m = v.min(b.get(k).copied().unwrap_or(0));
            (m > 0).then(|| (k.clone(), m))
        })
        .collect()
}

/// Multiset difference (positive remainders only).
fn minus(a: &Counter, b: &Counter) -> Counter {
    a.iter()
        .filter_map(|(k, &v)| {
            let d = v.saturating_sub(b.get(k).copied().unwrap_or(0));
            (d > 0).then(|| (k.clone(), d))
        })
        .collect()
}

fn get(c: &Counter, k: &str) -> f64 {
    c.get(k).copied().unwrap_or(0) as f64
}

fn f1(p: f64, r: f64) -> f64 {
    if p > 0.0 || r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// (keep F1, deletion precision, add F1) for one n-gram order.
fn sari_ngram(source: &[String], candidate: &[String], references: &[Vec<String>]) -> (f64, f64, f64) {
    let num_refs = references.len();
    let ref_counts = counter(references.iter().flatten(), 1);
    let src = counter(source, num_refs);
    let cand = counter(candidate, num_refs);

    let keep = and(&src, &cand);
    let keep_good = and(&keep, &ref_counts);
    let keep_all = and(&src, &ref_counts);
    let keep_p = if keep.is_empty() {
        1.0
    } else {
        keep.iter().map(|(k, &v)| get(&keep_good, k) / v as f64).sum::<f64>() / keep.len() as f64
    };
    let keep_r = if keep_all.is_empty() {
        1.0
    } else {
        keep.keys().map(|k| get(&keep_good, k)).sum::<f64>() / keep_all.values().sum::<usize>() as f64
    };

    let deleted = minus(&src, &cand);
    let deleted_good = minus(&deleted, &ref_counts);
    let del_p = if deleted.is_empty() {
        1.0
    } else {
        deleted.iter().map(|(k, &v)| get(&deleted_good, k) / v as f64).sum::<f64>() / deleted.len() as f64
    };

    let src_set: HashSet<&String> = src.keys().collect();
    let ref_set: HashSet<&String> = ref_counts.keys().collect();
    let added: HashSet<&String> = cand.keys().filter(|k| !src_set.contains(k)).collect();
    let added_good = added.iter().filter(|k| ref_set.contains(*k)).count() as f64;
    let added_all = ref_set.difference(&src_set).count();
    let add_p = if added.is_empty() { 1.0 } else { added_good / added.len() as f64 };
    let add_r = if added_all == 0 { 1.0 } else { added_good / added_all as f64 };

    (f1(keep_p, keep_r), del_p, f1(add_p, add_r))
}

fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.join(" ")).collect()
}

fn tokens(text: &str) -> Vec<String> {
    let t = normalize_13a(text);
    if t.is_empty() {
        vec![String::new()]
    } else {
        t
    }
}

/// SARI of one candidate in `[0, 1]`.
pub fn sari_sentence(source: &str, candidate: &str, references: &[String]) -> f64 {
    let s = tokens(source);
    let c = tokens(candidate);
    let r: Vec<Vec<String>> = references.iter().map(|x| tokens(x)).collect();
    let (mut keep, mut del, mut add) = (0.0, 0.0, 0.0);
    for n in 1..=4 {
        let rn: Vec<Vec<String>> = r.iter().map(|x| ngrams(x, n)).collect();
        let (k, d, a) = sari_ngram(&ngrams(&s, n), &ngrams(&c, n), &rn);
        keep += k;
        del += d;
        add += a;
    }
    (keep / 4.0 + del / 4.0 + add / 4.0) / 3.0
}

/// Corpus SARI on the 0–100 scale: the mean sentence score.
pub fn sari(sources: &[String], candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    if sources.len() != candidates.len() {
        return Err(MetricsError::LengthMismatch(candidates.len(), sources.len()));
    }
    if references.len() != candidates.len() {
        return Err(MetricsError::LengthMismatch(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = sources
        .iter()
        .zip(candidates)
        .zip(references)
        .map(|((s, c), r)| sari_sentence(s, c, r))
        .sum();
    Ok(100.0 * sum / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_triple_is_perfect() {
        let t = "The patient was discharged on aspirin.";
        assert!((sari_sentence(t, t, &[t.to_string()]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths() {
        let v = vec!["a".to_string()];
        assert!(sari(&v, &v, &[]).is_err());
    }
}
