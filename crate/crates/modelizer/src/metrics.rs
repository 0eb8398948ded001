//! Sequence-similarity metrics for model evaluation: Levenshtein, BLEU,
//! NIST, WER, WIL, and exact/close match rates.
//!
//! All functions operate on token sequences and are pure.

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("metric requires a non-empty corpus")]
    EmptyCorpus,
    #[error("standard error requires at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("reference sequence must be non-empty")]
    EmptyReference,
    #[error("reference and hypothesis counts differ: {refs} vs {hyps}")]
    LengthMismatch { refs: usize, hyps: usize },
}

/// Minimal number of insertions, deletions, and substitutions turning `a`
/// into `b`.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Alignment hits (exact token matches) in a minimal-cost alignment.
/// Among minimal alignments the traceback prefers match > substitution >
/// deletion > insertion, fixing an otherwise ambiguous choice.
fn alignment_hits<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let (m, n) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; n + 1]; m + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=n {
        d[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut hits = 0;
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = d[i][j];
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && d[i - 1][j - 1] == here {
            hits += 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i - 1][j - 1] + 1 == here {
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i - 1][j] + 1 == here {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    hits
}

fn ngram_counts<'a, T: PartialEq + Eq + std::hash::Hash>(
    seq: &'a [T],
    n: usize,
) -> HashMap<&'a [T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n && n > 0 {
        for window in seq.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn check_corpus<A, B>(references: &[A], hypotheses: &[B]) -> Result<(), MetricsError> {
    if references.len() != hypotheses.len() {
        return Err(MetricsError::LengthMismatch {
            refs: references.len(),
            hyps: hypotheses.len(),
        });
    }
    if references.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(())
}

/// Corpus BLEU: modified n-gram precisions (n = 1..4) pooled over the
/// corpus, geometric mean, times the brevity penalty exp(1 − r/c) when the
/// hypothesis corpus is shorter than the reference corpus.
pub fn corpus_bleu(
    references: &[Vec<String>],
    hypotheses: &[Vec<String>],
) -> Result<f64, MetricsError> {
    check_corpus(references, hypotheses)?;
    let mut log_sum = 0.0f64;
    for n in 1..=4 {
        let (mut matched, mut total) = (0usize, 0usize);
        for (r, h) in references.iter().zip(hypotheses) {
            let ref_counts = ngram_counts(r.as_slice(), n);
            for (gram, count) in ngram_counts(h.as_slice(), n) {
                matched += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                total += count;
            }
        }
        if matched == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c: usize = hypotheses.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c == 0 {
        return Ok(0.0);
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / 4.0).exp())
}

/// Smoothing constant for per-sentence BLEU on short sequences.
const BLEU_EPSILON: f64 = 1e-9;

/// Sentence BLEU with add-epsilon smoothing of zero n-gram counts, used
/// for the per-sample spread behind [`bleu_std_error`].
pub fn sentence_bleu(reference: &[String], hypothesis: &[String]) -> f64 {
    let mut log_sum = 0.0f64;
    for n in 1..=4 {
        let ref_counts = ngram_counts(reference, n);
        let (mut matched, mut total) = (0usize, 0usize);
        for (gram, count) in ngram_counts(hypothesis, n) {
            matched += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            total += count;
        }
        let p = if total == 0 {
            BLEU_EPSILON
        } else if matched == 0 {
            BLEU_EPSILON / total as f64
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let (c, r) = (hypothesis.len(), reference.len());
    let bp = if c == 0 {
        return 0.0;
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / 4.0).exp()
}

/// Standard error of the mean of per-sample sentence-BLEU values:
/// population standard deviation over √n.
pub fn bleu_std_error(
    references: &[Vec<String>],
    hypotheses: &[Vec<String>],
) -> Result<f64, MetricsError> {
    check_corpus(references, hypotheses)?;
    let n = references.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let values: Vec<f64> = references
        .iter()
        .zip(hypotheses)
        .map(|(r, h)| sentence_bleu(r, h))
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(variance.sqrt() / (n as f64).sqrt())
}

/// NIST score: information-weighted n-gram precision (n = 1..5) with the
/// NIST brevity factor. Information weights come from the reference
/// corpus: rarer reference n-grams contribute more.
pub fn nist_score(
    references: &[Vec<String>],
    hypotheses: &[Vec<String>],
) -> Result<f64, MetricsError> {
    check_corpus(references, hypotheses)?;

    // Reference-corpus n-gram counts, n = 0..5 (n=0 tracks total tokens).
    let mut corpus_counts: Vec<HashMap<Vec<String>, usize>> = vec![HashMap::new(); 6];
    let mut total_ref_tokens = 0usize;
    for r in references {
        total_ref_tokens += r.len();
        for n in 1..=5usize {
            if r.len() >= n {
                for w in r.windows(n) {
                    *corpus_counts[n].entry(w.to_vec()).or_insert(0) += 1;
                }
            }
        }
    }
    let info = |gram: &[String]| -> f64 {
        let n = gram.len();
        let count = corpus_counts[n].get(gram).copied().unwrap_or(0);
        if count == 0 {
            return 0.0;
        }
        let parent = if n == 1 {
            total_ref_tokens
        } else {
            corpus_counts[n - 1]
                .get(&gram[..n - 1])
                .copied()
                .unwrap_or(count)
        };
        (parent as f64 / count as f64).log2()
    };

    let mut score = 0.0f64;
    for n in 1..=5usize {
        let mut weighted = 0.0f64;
        let mut total = 0usize;
        for (r, h) in references.iter().zip(hypotheses) {
            let ref_counts = ngram_counts(r.as_slice(), n);
            for (gram, count) in ngram_counts(h.as_slice(), n) {
                let matched = count.min(ref_counts.get(gram).copied().unwrap_or(0));
                weighted += matched as f64 * info(gram);
                total += count;
            }
        }
        if total > 0 {
            score += weighted / total as f64;
        }
    }

    let c: usize = hypotheses.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    if c == 0 || r == 0 {
        return Ok(0.0);
    }
    // β makes the factor 0.5 at a 2/3 length ratio, per the NIST definition.
    let beta = 0.5f64.ln() / (2.0f64 / 3.0).ln().powi(2);
    let ratio = (c as f64 / r as f64).min(1.0);
    let brevity = (beta * ratio.ln().powi(2)).exp();
    Ok(score * brevity)
}

/// Word error rate: 100 × edit distance / reference length. Can exceed
/// 100 for long hypotheses.
pub fn wer(reference: &[String], hypothesis: &[String]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(100.0 * levenshtein(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Word information lost: 100 × (1 − (H/N_ref)(H/N_hyp)) with H the
/// alignment hit count.
pub fn wil(reference: &[String], hypothesis: &[String]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    if hypothesis.is_empty() {
        return Ok(100.0);
    }
    let h = alignment_hits(reference, hypothesis) as f64;
    let recall = h / reference.len() as f64;
    let precision = h / hypothesis.len() as f64;
    Ok(100.0 * (1.0 - recall * precision))
}

/// (exact, close) match percentages over the corpus: exact is edit
/// distance 0, close is distance exactly 1 — disjoint, additive buckets.
pub fn match_rates(
    references: &[Vec<String>],
    hypotheses: &[Vec<String>],
) -> Result<(f64, f64), MetricsError> {
    check_corpus(references, hypotheses)?;
    let n = references.len() as f64;
    let (mut exact, mut close) = (0usize, 0usize);
    for (r, h) in references.iter().zip(hypotheses) {
        match levenshtein(r, h) {
            0 => exact += 1,
            1 => close += 1,
            _ => {}
        }
    }
    Ok((100.0 * exact as f64 / n, 100.0 * close as f64 / n))
}

/// The full evaluation summary reported by the toolkit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvaluationReport {
    pub bleu: f64,
    pub bleu_std_error: f64,
    pub nist: f64,
    pub wer: f64,
    pub wil: f64,
    pub exact_match: f64,
    pub close_match: f64,
    pub sample_count: usize,
}

/// Computes every metric over a parallel reference/hypothesis corpus. WER
/// and WIL are averaged per sample.
pub fn evaluate(
    references: &[Vec<String>],
    hypotheses: &[Vec<String>],
) -> Result<EvaluationReport, MetricsError> {
    check_corpus(references, hypotheses)?;
    let n = references.len();
    let mut wer_sum = 0.0;
    let mut wil_sum = 0.0;
    for (r, h) in references.iter().zip(hypotheses) {
        wer_sum += wer(r, h)?;
        wil_sum += wil(r, h)?;
    }
    let (exact, close) = match_rates(references, hypotheses)?;
    Ok(EvaluationReport {
        bleu: corpus_bleu(references, hypotheses)?,
        bleu_std_error: if n >= 2 {
            bleu_std_error(references, hypotheses)?
        } else {
            0.0
        },
        nist: nist_score(references, hypotheses)?,
        wer: wer_sum / n as f64,
        wil: wil_sum / n as f64,
        exact_match: exact,
        close_match: close,
        sample_count: n,
    })
}

impl EvaluationReport {
    /// Flat `key = value` rendering for the text report.
    pub fn to_text(&self) -> String {
        format!(
            "bleu = {:.6}\nbleu_std_error = {:.6}\nnist = {:.6}\nwer = {:.4}\nwil = {:.4}\n\
             exact_match = {:.4}\nclose_match = {:.4}\nsample_count = {}\n",
            self.bleu,
            self.bleu_std_error,
            self.nist,
            self.wer,
            self.wil,
            self.exact_match,
            self.close_match,
            self.sample_count
        )
    }
}
