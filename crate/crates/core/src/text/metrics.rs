//! Overlap metrics over token sequences.

use std::collections::{BTreeSet, HashMap};

/// Unigram overlap `|A ∩ B| / |A ∪ B|` over word types. Two empty
/// sequences count as identical.
pub fn jaccard_unigram<S: AsRef<str>>(q: &[S], q_hat: &[S]) -> f64 {
    let a: BTreeSet<&str> = q.iter().map(AsRef::as_ref).collect();
    let b: BTreeSet<&str> = q_hat.iter().map(AsRef::as_ref).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 with uniform weights and brevity penalty.
///
/// A candidate sharing no unigram with the reference scores 0. For
/// `n >= 2`, an order with no matching n-gram uses `1 / (count + 1)`.
pub fn bleu4<S: AsRef<str>>(reference: &[S], candidate: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

pub const ROUGE_BETA: f64 = 1.2;

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

/// ROUGE-L F-measure with `beta = 1.2`.
pub fn rouge_l<S: AsRef<str>>(reference: &[S], candidate: &[S]) -> f64 {
    if reference.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(reference, candidate) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let recall = lcs / reference.len() as f64;
    let precision = lcs / candidate.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * recall * precision / (recall + b2 * precision)
}

/// Answer normalization used by SQuAD scoring: lowercase, drop ASCII
/// punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let cleaned: String = s.to_lowercase().chars().filter(|c| !c.is_ascii_punctuation()).collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquadScore {
    pub exact: bool,
    pub f1: f64,
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return (pred.is_empty() && gold.is_empty()) as u8 as f64;
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *gold_counts.entry(g).or_insert(0) += 1;
    }
    let mut common = 0;
    for p in pred {
        if let Some(c) = gold_counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match and token F1, maximized over gold answers. An empty gold
/// list marks an unanswerable question: only an empty prediction scores.
pub fn squad_em_f1<S: AsRef<str>>(pred: &str, gold_answers: &[S]) -> SquadScore {
    let pred = normalize_answer(pred);
    let golds: Vec<Vec<String>> = if gold_answers.is_empty() {
        vec![Vec::new()]
    } else {
        gold_answers.iter().map(|g| normalize_answer(g.as_ref())).collect()
    };
    SquadScore {
        exact: golds.iter().any(|g| *g == pred),
        f1: golds.iter().map(|g| f1_tokens(&pred, g)).fold(0.0, f64::max),
    }
}
