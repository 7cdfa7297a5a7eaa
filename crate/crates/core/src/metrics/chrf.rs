use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChrfParams {
    pub max_ngram: usize,
    pub beta: f64,
    pub whitespace_in_ngrams: bool,
}

impl Default for ChrfParams {
    fn default() -> Self {
        Self {
            max_ngram: 6,
            beta: 2.0,
            whitespace_in_ngrams: false,
        }
    }
}

impl ChrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_ngram == 0 {
            return Err(Error::Validation("chrF max_ngram must be >= 1".into()));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::Validation("chrF beta must be > 0".into()));
        }
        Ok(())
    }
}

/// Matched, hypothesis and reference n-gram counts for one order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NgramCounts {
    pub matched: u64,
    pub hyp_total: u64,
    pub ref_total: u64,
}

/// Per-order counts, index 0 holding unigrams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChrfStats {
    pub orders: Vec<NgramCounts>,
}

impl ChrfStats {
    fn new(max_ngram: usize) -> Self {
        Self {
            orders: vec![NgramCounts::default(); max_ngram],
        }
    }

    fn add(&mut self, other: &ChrfStats) {
        for (a, b) in self.orders.iter_mut().zip(&other.orders) {
            a.matched += b.matched;
            a.hyp_total += b.hyp_total;
            a.ref_total += b.ref_total;
        }
    }

    /// 100 × mean per-order F-beta over orders that have reference n-grams.
    pub fn score(&self, beta: f64) -> f64 {
        let beta2 = beta * beta;
        let mut sum = 0.0;
        let mut counted = 0usize;
        for c in self.orders.iter().filter(|c| c.ref_total > 0) {
            counted += 1;
            let p = if c.hyp_total == 0 { 0.0 } else { c.matched as f64 / c.hyp_total as f64 };
            let r = c.matched as f64 / c.ref_total as f64;
            if p + r > 0.0 {
                sum += (1.0 + beta2) * p * r / (beta2 * p + r);
            }
        }
        if counted == 0 {
            0.0
        } else {
            100.0 * sum / counted as f64
        }
    }
}

fn prepare(text: &str, keep_whitespace: bool) -> Vec<char> {
    if keep_whitespace {
        text.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect()
    } else {
        text.chars().filter(|c| !c.is_whitespace()).collect()
    }
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for gram in chars.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub fn chrf_stats(hypothesis: &str, reference: &str, params: &ChrfParams) -> Result<ChrfStats> {
    params.validate()?;
    let hyp = prepare(hypothesis, params.whitespace_in_ngrams);
    let reference = prepare(reference, params.whitespace_in_ngrams);
    if reference.is_empty() {
        return Err(Error::Validation("chrF reference is empty".into()));
    }
    let mut stats = ChrfStats::new(params.max_ngram);
    for n in 1..=params.max_ngram {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&reference, n);
        let slot = &mut stats.orders[n - 1];
        slot.hyp_total = h.values().sum();
        slot.ref_total = r.values().sum();
        slot.matched = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    }
    Ok(stats)
}

pub fn chrf_sentence(hypothesis: &str, reference: &str, params: &ChrfParams) -> Result<f64> {
    Ok(chrf_stats(hypothesis, reference, params)?.score(params.beta))
}

/// Counts summed over all pairs before the F-score is taken.
pub fn chrf_corpus<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)], params: &ChrfParams) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("chrF corpus is empty".into()));
    }
    let mut total = ChrfStats::new(params.max_ngram);
    for (h, r) in pairs {
        total.add(&chrf_stats(h.as_ref(), r.as_ref(), params)?);
    }
    Ok(total.score(params.beta))
}

/// Mean of sentence-level scores.
pub fn chrf_sentence_average<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)], params: &ChrfParams) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("chrF corpus is empty".into()));
    }
    let mut sum = 0.0;
    for (h, r) in pairs {
        sum += chrf_sentence(h.as_ref(), r.as_ref(), params)?;
    }
    Ok(sum / pairs.len() as f64)
}
