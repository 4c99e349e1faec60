//! Corpus-level BLEU-1..4, ROUGE-L and an exact-match METEOR.
//!
//! Tokens are compared after lowercasing. Scores are percentages.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
}

/// A prediction and its single reference, lowercased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub pred: Vec<String>,
    pub reference: Vec<String>,
}

impl Pair {
    pub fn new<S: AsRef<str>>(pred: &[S], reference: &[S]) -> Self {
        let lower = |xs: &[S]| xs.iter().map(|s| s.as_ref().to_lowercase()).collect();
        Pair {
            pred: lower(pred),
            reference: lower(reference),
        }
    }

    /// Splits both sides on whitespace.
    pub fn from_text(pred: &str, reference: &str) -> Self {
        let p: Vec<&str> = pred.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        Pair::new(&p, &r)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with orders `1..=n` equally weighted, clipped counts, no
/// smoothing, and brevity penalty `exp(1 − r/c)` when `c < r`.
pub fn corpus_bleu(pairs: &[Pair], n: usize) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for p in pairs {
            let refs = ngram_counts(&p.reference, order);
            for (gram, count) in ngram_counts(&p.pred, order) {
                matched += count.min(refs.get(gram).copied().unwrap_or(0));
                total += count;
            }
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c: usize = pairs.iter().map(|p| p.pred.len()).sum();
    let r: usize = pairs.iter().map(|p| p.reference.len()).sum();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(100.0 * bp * (log_sum / n as f64).exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence ROUGE-L F-measure in `[0, 1]`.
pub fn rouge_l_pair(p: &Pair, beta: f64) -> f64 {
    let l = lcs_len(&p.pred, &p.reference);
    if l == 0 {
        return 0.0;
    }
    let r = l as f64 / p.reference.len() as f64;
    let prec = l as f64 / p.pred.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * r * prec / (r + b2 * prec)
}

/// Mean sentence ROUGE-L × 100.
pub fn rouge_l(pairs: &[Pair], beta: f64) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(100.0 * pairs.iter().map(|p| rouge_l_pair(p, beta)).sum::<f64>() / pairs.len() as f64)
}

/// One-to-one exact alignment: prediction position → reference position.
/// Each prediction token takes the reference position right after its
/// predecessor's match when the word fits there, otherwise the earliest free
/// match. The number of matches is always maximal.
pub fn align(pred: &[String], reference: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    let mut out: Vec<Option<usize>> = Vec::with_capacity(pred.len());
    for (i, w) in pred.iter().enumerate() {
        let follow = i
            .checked_sub(1)
            .and_then(|k| out[k])
            .map(|j| j + 1)
            .filter(|&j| j < reference.len() && !used[j] && reference[j] == *w);
        let pick = follow.or_else(|| (0..reference.len()).find(|&j| !used[j] && reference[j] == *w));
        if let Some(j) = pick {
            used[j] = true;
        }
        out.push(pick);
    }
    out
}

/// Matched runs that are contiguous in both sequences.
pub fn chunks(alignment: &[Option<usize>]) -> usize {
    let mut count = 0;
    let mut prev: Option<usize> = None;
    for a in alignment {
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => count += 1,
            _ => {}
        }
        prev = *a;
    }
    count
}

/// Sentence METEOR with exact matching only, in `[0, 1]`.
pub fn meteor_pair(p: &Pair) -> f64 {
    let al = align(&p.pred, &p.reference);
    let m = al.iter().filter(|a| a.is_some()).count();
    if m == 0 {
        return 0.0;
    }
    let prec = m as f64 / p.pred.len() as f64;
    let rec = m as f64 / p.reference.len() as f64;
    let f = 10.0 * prec * rec / (rec + 9.0 * prec);
    let penalty = 0.5 * (chunks(&al) as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

pub fn meteor(pairs: &[Pair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(100.0 * pairs.iter().map(meteor_pair).sum::<f64>() / pairs.len() as f64)
}

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub pairs: usize,
}

impl EvalReport {
    pub fn compute(pairs: &[Pair]) -> Result<Self, MetricError> {
        Ok(EvalReport {
            bleu1: corpus_bleu(pairs, 1)?,
            bleu2: corpus_bleu(pairs, 2)?,
            bleu3: corpus_bleu(pairs, 3)?,
            bleu4: corpus_bleu(pairs, 4)?,
            rouge_l: rouge_l(pairs, ROUGE_BETA)?,
            meteor: meteor(pairs)?,
            pairs: pairs.len(),
        })
    }

    /// Two-column text table.
    pub fn table(&self) -> String {
        let rows = [
            ("BLEU-1", self.bleu1),
            ("BLEU-2", self.bleu2),
            ("BLEU-3", self.bleu3),
            ("BLEU-4", self.bleu4),
            ("ROUGE-L", self.rouge_l),
            ("METEOR", self.meteor),
        ];
        let mut s = String::new();
        for (name, v) in rows {
            s.push_str(&format!("{name:<8} {v:>7.2}\n"));
        }
        s.push_str(&format!("{:<8} {:>7}\n", "pairs", self.pairs));
        s
    }
}
