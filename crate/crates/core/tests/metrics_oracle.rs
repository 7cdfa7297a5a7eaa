use std::collections::BTreeMap;

use mufu_core::language::{LanguageRegistry, ResourceLevel};
use mufu_core::metrics::{
    bleu_corpus, build_report, chrf_corpus, chrf_sentence, stratified_report, tokenize, win_percent, ChrfParams,
    ScoreTable, SET_ALL, SET_LOW,
};
use proptest::prelude::*;

/// Per-order (matched, hyp_total, ref_total) by enumerating every substring
/// and pairing each hypothesis n-gram with an unused equal reference n-gram.
fn brute_counts(hyp: &str, reference: &str, max_n: usize) -> Vec<(usize, usize, usize)> {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    (1..=max_n)
        .map(|n| {
            let hg: Vec<String> = (0..h.len().saturating_sub(n - 1)).map(|i| h[i..i + n].iter().collect()).collect();
            let rg: Vec<String> = (0..r.len().saturating_sub(n - 1)).map(|i| r[i..i + n].iter().collect()).collect();
            let mut used = vec![false; rg.len()];
            let mut matched = 0;
            for g in &hg {
                if let Some(j) = (0..rg.len()).find(|&j| !used[j] && &rg[j] == g) {
                    used[j] = true;
                    matched += 1;
                }
            }
            (matched, hg.len(), rg.len())
        })
        .collect()
}

fn oracle_score(counts: &[(usize, usize, usize)]) -> f64 {
    let beta2 = 4.0;
    let mut sum = 0.0;
    let mut orders = 0;
    for &(m, ht, rt) in counts {
        if rt == 0 {
            continue;
        }
        orders += 1;
        let p = if ht == 0 { 0.0 } else { m as f64 / ht as f64 };
        let r = m as f64 / rt as f64;
        if p + r > 0.0 {
            sum += (1.0 + beta2) * p * r / (beta2 * p + r);
        }
    }
    100.0 * sum / orders as f64
}

fn text(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!['a', 'b', 'c', ' ', 'é', 'ж', '中', 'ก', 'x']), 0..=max)
        .prop_map(|v| v.into_iter().collect())
}

fn nonblank(max: usize) -> impl Strategy<Value = String> {
    text(max).prop_filter("reference needs a non-space char", |s| s.chars().any(|c| !c.is_whitespace()))
}

#[test]
fn cat_sat_matches_oracle() {
    let got = chrf_sentence("cat sat", "cat sag", &ChrfParams::default()).unwrap();
    let want = oracle_score(&brute_counts("cat sat", "cat sag", 6));
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

proptest! {
    #[test]
    fn sentence_matches_oracle(h in text(20), r in nonblank(20)) {
        let got = chrf_sentence(&h, &r, &ChrfParams::default()).unwrap();
        let want = oracle_score(&brute_counts(&h, &r, 6));
        prop_assert!((got - want).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&got));
    }

    #[test]
    fn corpus_matches_summed_oracle(pairs in prop::collection::vec((text(20), nonblank(20)), 10)) {
        let got = chrf_corpus(&pairs, &ChrfParams::default()).unwrap();
        let mut summed = vec![(0, 0, 0); 6];
        for (h, r) in &pairs {
            for (acc, c) in summed.iter_mut().zip(brute_counts(h, r, 6)) {
                acc.0 += c.0;
                acc.1 += c.1;
                acc.2 += c.2;
            }
        }
        prop_assert!((got - oracle_score(&summed)).abs() < 1e-9);
    }

    #[test]
    fn single_pair_corpus_equals_sentence(h in text(20), r in nonblank(20)) {
        let p = ChrfParams::default();
        prop_assert_eq!(chrf_corpus(&[(&h, &r)], &p).unwrap(), chrf_sentence(&h, &r, &p).unwrap());
    }

    #[test]
    fn whitespace_invariance(h in text(20), r in nonblank(20), pad in "[ \t]{0,3}") {
        let p = ChrfParams::default();
        let spaced: String = h.chars().flat_map(|c| [c, ' ']).collect();
        let base = chrf_sentence(&h, &r, &p).unwrap();
        prop_assert_eq!(base, chrf_sentence(&format!("{pad}{spaced}{pad}"), &r, &p).unwrap());
    }

    #[test]
    fn identical_is_100(r in nonblank(30)) {
        prop_assert_eq!(chrf_sentence(&r, &r, &ChrfParams::default()).unwrap(), 100.0);
    }
}

/// Clipped n-gram counts by linear search over token windows.
fn bleu_oracle(hyp: &str, reference: &str) -> f64 {
    let h = tokenize(hyp);
    let r = tokenize(reference);
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let hg: Vec<&[String]> = if h.len() >= n { h.windows(n).collect() } else { vec![] };
        let rg: Vec<&[String]> = if r.len() >= n { r.windows(n).collect() } else { vec![] };
        let mut used = vec![false; rg.len()];
        let mut m = 0usize;
        for g in &hg {
            if let Some(j) = (0..rg.len()).find(|&j| !used[j] && rg[j] == *g) {
                used[j] = true;
                m += 1;
            }
        }
        let p = if m == 0 { 1.0 / (hg.len() as f64 + 1.0) } else { m as f64 / hg.len() as f64 };
        log_sum += p.ln();
    }
    let bp = (1.0 - r.len() as f64 / h.len() as f64).min(0.0).exp();
    100.0 * bp * (log_sum / 4.0).exp()
}

#[test]
fn bleu_zero_fourgram_matches_is_smoothed() {
    let hyp = "the cat sat on a mat";
    let reference = "the cat sat upon the mat";
    let got = bleu_corpus(&[(hyp, reference)], 4).unwrap();
    assert!(got > 0.0 && got < 100.0);
    assert!((got - bleu_oracle(hyp, reference)).abs() < 1e-9);
}

fn fixture_report() -> (ScoreTable, LanguageRegistry) {
    (ScoreTable::bundled(), LanguageRegistry::bundled())
}

const TEACHER: &str = "PaLM2 S (teacher)";
const NLLB: &str = "NLLB 1.3B distilled";
const XXS: &str = "PaLM2 XXS-NTL (mufu20)";
const GEMMA: &str = "Gemma 7B (mufu20)";

#[test]
fn fixture_means_and_teacher_wins() {
    let (table, registry) = fixture_report();
    let report = build_report(&table, &registry, &[XXS, GEMMA], &[TEACHER, NLLB]).unwrap();
    let xxs = report.mean(XXS, SET_ALL).unwrap();
    assert_eq!(xxs.n, 201);
    assert!((xxs.mean - 48.4).abs() <= 0.1);
    assert!((report.mean(GEMMA, SET_ALL).unwrap().mean - 47.6).abs() <= 0.1);
    let win = report.win(XXS, TEACHER, SET_ALL).unwrap();
    assert_eq!(win.n, 201);
    assert!((win.win_percent - 54.2).abs() <= 0.5);
    assert!((report.win(GEMMA, TEACHER, SET_ALL).unwrap().win_percent - 51.7).abs() <= 0.5);
    assert_eq!(report.win(XXS, TEACHER, SET_LOW).unwrap().n, 113);
    assert_eq!(report.win(XXS, NLLB, SET_ALL).unwrap().n, 198);
}

#[test]
fn fixture_stratum_counts() {
    let (table, registry) = fixture_report();
    let nllb = table.chrf_by_pair(NLLB);
    let xxs: BTreeMap<String, f64> = table.chrf_by_pair(XXS).into_iter().filter(|(p, _)| nllb.contains_key(p)).collect();
    let strata = stratified_report(&xxs, &registry).unwrap();
    let counts: Vec<usize> = ResourceLevel::ALL.iter().map(|l| strata[l].n).collect();
    assert_eq!(counts, vec![68, 45, 68, 17]);
}

#[test]
fn self_comparison_is_zero_on_fixture() {
    let (table, _) = fixture_report();
    let s = table.chrf_by_pair(XXS);
    let pairs: Vec<String> = s.keys().cloned().collect();
    assert_eq!(win_percent(&s, &s, &pairs).unwrap(), 0.0);
}
