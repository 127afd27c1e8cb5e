//! Evaluation metrics: word error rate via Levenshtein alignment, and
//! corpus BLEU with brevity penalty.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Edit counts behind a WER figure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn accumulate(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference_len += other.reference_len;
    }

    /// 100 * (S + D + I) / N. May exceed 100 when insertions dominate.
    pub fn wer(&self) -> f64 {
        100.0 * (self.substitutions + self.deletions + self.insertions) as f64
            / self.reference_len as f64
    }
}

/// Aggregated evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub wer: f64,
    pub counts: EditCounts,
    pub bleu: Option<[f64; 4]>,
}

/// Levenshtein alignment with unit costs. Ties in the backtrace are broken
/// substitution > deletion > insertion; the distance is unaffected.
pub fn wer<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<EditCounts> {
    if reference.is_empty() {
        return Err(Error::InvalidInput { op: "wer", reason: "empty reference".into() });
    }
    let n = reference.len();
    let m = hyp.len();
    // dp[i][j]: cost of aligning first i reference words with first j hyp words
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = dp[i - 1][j] + 1;
            let ins = dp[i][j - 1] + 1;
            dp[i][j] = sub.min(del).min(ins);
        }
    }
    // backtrace with the documented tie order
    let mut counts = EditCounts { reference_len: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let matched = reference[i - 1] == hyp[j - 1];
            let sub_cost = dp[i - 1][j - 1] + usize::from(!matched);
            if dp[i][j] == sub_cost {
                if !matched {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
            continue;
        }
        counts.insertions += 1;
        j -= 1;
    }
    Ok(counts)
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

/// Corpus-level BLEU-1..4: modified n-gram precision with brevity penalty.
/// `smoothing` applies add-one smoothing to orders >= 2 (useful for tiny
/// corpora where exact 4-gram matches are scarce).
pub fn bleu(hyps: &[Vec<usize>], refs: &[Vec<usize>], smoothing: bool) -> Result<[f64; 4]> {
    if hyps.is_empty() || hyps.len() != refs.len() {
        return Err(Error::InvalidInput {
            op: "bleu",
            reason: format!("corpus sizes: {} hyps vs {} refs", hyps.len(), refs.len()),
        });
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (gram, &count) in &hc {
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let bp = if hyp_len >= ref_len || hyp_len == 0 {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut precisions = [0.0f64; 4];
    for n in 0..4 {
        let (num, den) = if smoothing && n >= 1 {
            (matched[n] + 1, total[n] + 1)
        } else {
            (matched[n], total[n])
        };
        precisions[n] = if den == 0 { 0.0 } else { num as f64 / den as f64 };
    }
    let mut scores = [0.0f64; 4];
    for k in 1..=4 {
        if precisions[..k].iter().any(|&p| p == 0.0) {
            scores[k - 1] = 0.0;
        } else {
            let log_mean: f64 = precisions[..k].iter().map(|p| p.ln()).sum::<f64>() / k as f64;
            scores[k - 1] = 100.0 * bp * log_mean.exp();
        }
    }
    Ok(scores)
}
