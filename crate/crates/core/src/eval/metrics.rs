//! Per-example text metrics over pre-tokenized sequences.
//!
//! Empty inputs score 0 with a warning. All scores lie in `[0, 1]`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::ScoringModel;
use crate::objectives::{sequence_score, ObjectiveError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RougeMeasure {
    #[default]
    F1,
    Recall,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and the candidate's n-gram total.
fn clipped_matches<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

fn warn_empty(metric: &str) {
    log::warn!("{metric}: empty candidate or reference scores 0");
}

/// BLEU up to order `n`: clipped n-gram precisions, geometric mean and
/// brevity penalty `exp(1 - r/c)` when the candidate is shorter.
///
/// With `smoothing`, orders above 1 use `(matches + 1) / (total + 1)`.
pub fn bleu_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize, smoothing: bool) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be 1..=4, got {n}");
    if candidate.is_empty() || reference.is_empty() {
        warn_empty("bleu");
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (matched, total) = clipped_matches(candidate, reference, order);
        let (num, den) = if smoothing && order > 1 {
            (matched as f64 + 1.0, total as f64 + 1.0)
        } else {
            (matched as f64, total as f64)
        };
        if num == 0.0 || den == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    (bp * (log_sum / n as f64).exp()).clamp(0.0, 1.0)
}

fn f_or_recall(matched: f64, cand_total: f64, ref_total: f64, measure: RougeMeasure) -> f64 {
    if matched == 0.0 {
        return 0.0;
    }
    let recall = matched / ref_total;
    match measure {
        RougeMeasure::Recall => recall,
        RougeMeasure::F1 => {
            let precision = matched / cand_total;
            2.0 * precision * recall / (precision + recall)
        }
    }
}

/// ROUGE-N as F1 (or recall) of clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(
    candidate: &[S],
    reference: &[S],
    n: usize,
    measure: RougeMeasure,
) -> f64 {
    assert!(n >= 1, "ROUGE order must be positive");
    if candidate.is_empty() || reference.is_empty() {
        warn_empty("rouge_n");
        return 0.0;
    }
    let (matched, cand_total) = clipped_matches(candidate, reference, n);
    let ref_total = reference.len().saturating_sub(n - 1);
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    f_or_recall(matched as f64, cand_total as f64, ref_total as f64, measure)
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L as F1 (or recall) of the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S], measure: RougeMeasure) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        warn_empty("rouge_l");
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    f_or_recall(l, candidate.len() as f64, reference.len() as f64, measure)
}

const SUFFIXES: &[&str] = &["ingly", "edly", "ing", "ies", "ied", "es", "ed", "ly", "s"];

/// Light suffix-stripping stemmer used for METEOR's second matching stage.
pub fn crude_stem(token: &str) -> &str {
    for suffix in SUFFIXES {
        if let Some(stem) = token.strip_suffix(suffix) {
            if stem.chars().count() >= 3 {
                return stem;
            }
        }
    }
    token
}

/// Unigram alignment as `(candidate_index, reference_index)` pairs sorted
/// by candidate index. Exact matches first, then stem matches among the
/// leftovers; each stage pairs every candidate token with the first unused
/// reference token that matches.
pub fn meteor_alignment<S: AsRef<str>>(
    candidate: &[S],
    reference: &[S],
    stem: bool,
) -> Vec<(usize, usize)> {
    let mut cand_used = vec![false; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let stages: &[fn(&str, &str) -> bool] = if stem {
        &[|a, b| a == b, |a, b| crude_stem(a) == crude_stem(b)]
    } else {
        &[|a, b| a == b]
    };
    for matches in stages {
        for (i, c) in candidate.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            if let Some(j) = (0..reference.len())
                .find(|&j| !ref_used[j] && matches(c.as_ref(), reference[j].as_ref()))
            {
                cand_used[i] = true;
                ref_used[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Number of runs of alignment pairs adjacent in both sequences.
pub fn chunk_count(alignment: &[(usize, usize)]) -> usize {
    if alignment.is_empty() {
        return 0;
    }
    1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// Simplified METEOR: `Fmean = 10PR / (R + 9P)` over aligned unigrams,
/// times `1 - 0.5 (chunks/m)^3` when the alignment has more than one chunk.
/// A single contiguous chunk carries no penalty.
pub fn meteor_simplified<S: AsRef<str>>(candidate: &[S], reference: &[S], stem: bool) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        warn_empty("meteor_simplified");
        return 0.0;
    }
    let alignment = meteor_alignment(candidate, reference, stem);
    let m = alignment.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let chunks = chunk_count(&alignment);
    let penalty = if chunks > 1 {
        0.5 * (chunks as f64 / m).powi(3)
    } else {
        0.0
    };
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}

/// `exp(-S)` for the answer under the prompt.
pub fn perplexity(
    model: &dyn ScoringModel,
    prompt: &str,
    answer: &str,
) -> Result<f64, ObjectiveError> {
    Ok((-sequence_score(model, prompt, answer)?).exp())
}
