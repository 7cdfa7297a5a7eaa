use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

const UNSEGMENTED: &str = r"\p{Han}\p{Hiragana}\p{Katakana}\p{Thai}\p{Lao}\p{Khmer}\p{Myanmar}\p{Tibetan}";

// Punctuation, a single unsegmented-script character with its combining
// marks, or a run of anything else.
static TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"\p{{P}}|[{UNSEGMENTED}]\p{{M}}*|[^\p{{P}}{UNSEGMENTED}]+")).expect("token regex")
});

/// NFC, whitespace split, punctuation split off, and characters of scripts
/// written without spaces kept as single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace()
        .flat_map(|chunk| TOKEN.find_iter(chunk).map(|m| m.as_str().to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped matches per order.
    pub matched: Vec<u64>,
    /// Hypothesis n-grams per order.
    pub total: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    fn new(max_order: usize) -> Self {
        Self {
            matched: vec![0; max_order],
            total: vec![0; max_order],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    /// Geometric mean of precisions times brevity penalty, on 0..100.
    /// Orders with no matches use (0 + 1) / (total + 1).
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let order_count = self.matched.len() as f64;
        let log_mean: f64 = self
            .matched
            .iter()
            .zip(&self.total)
            .map(|(&m, &t)| {
                let p = if m == 0 { 1.0 / (t as f64 + 1.0) } else { m as f64 / t as f64 };
                p.ln()
            })
            .sum::<f64>()
            / order_count;
        let bp = (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp();
        100.0 * bp * log_mean.exp()
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu_stats<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)], max_order: usize) -> Result<BleuStats> {
    if pairs.is_empty() {
        return Err(Error::Validation("BLEU corpus is empty".into()));
    }
    if max_order == 0 {
        return Err(Error::Validation("BLEU max_order must be >= 1".into()));
    }
    let mut stats = BleuStats::new(max_order);
    for (h, r) in pairs {
        let hyp = tokenize(h.as_ref());
        let reference = tokenize(r.as_ref());
        stats.hyp_len += hyp.len() as u64;
        stats.ref_len += reference.len() as u64;
        for n in 1..=max_order {
            let hc = ngrams(&hyp, n);
            let rc = ngrams(&reference, n);
            stats.total[n - 1] += hc.values().sum::<u64>();
            stats.matched[n - 1] += hc
                .iter()
                .map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0)))
                .sum::<u64>();
        }
    }
    Ok(stats)
}

pub fn bleu_corpus<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)], max_order: usize) -> Result<f64> {
    Ok(bleu_stats(pairs, max_order)?.score())
}
