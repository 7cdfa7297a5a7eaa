//! Aligned multilingual corpora, deterministic dev splits and the
//! distillation source pool.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    languages: BTreeMap<String, Vec<String>>,
    n_sentences: usize,
}

impl ParallelCorpus {
    pub fn from_languages(languages: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let n_sentences = languages.values().next().map(Vec::len).unwrap_or(0);
        for (code, sentences) in &languages {
            if sentences.len() != n_sentences {
                return Err(Error::Validation(format!(
                    "{code} has {} sentences, expected {n_sentences}",
                    sentences.len()
                )));
            }
            if let Some(i) = sentences.iter().position(|s| s.contains('\n')) {
                return Err(Error::Validation(format!("{code} sentence {i} contains a newline")));
            }
        }
        Ok(Self { languages, n_sentences })
    }

    pub fn n_sentences(&self) -> usize {
        self.n_sentences
    }

    pub fn sentences(&self, code: &str) -> Result<&[String]> {
        self.languages
            .get(code)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn sentence(&self, code: &str, index: usize) -> Result<&str> {
        self.sentences(code)?
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| Error::Validation(format!("sentence index {index} out of range for {code}")))
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.languages.keys().map(String::as_str)
    }

    pub fn has_language(&self, code: &str) -> bool {
        self.languages.contains_key(code)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        let valid = &e.as_bytes()[..e.utf8_error().valid_up_to()];
        Error::Decode {
            path: path.to_path_buf(),
            line: valid.iter().filter(|b| **b == b'\n').count() + 1,
        }
    })?;
    Ok(text.lines().map(|l| l.trim_end().to_string()).collect())
}

/// Loads `<dir>/<code>.txt` for every code; all files must have equal line counts.
pub fn load_corpus(dir: &Path, codes: &[&str]) -> Result<ParallelCorpus> {
    let mut languages = BTreeMap::new();
    let mut first: Option<(PathBuf, usize)> = None;
    for code in codes {
        let path = dir.join(format!("{code}.txt"));
        let lines = read_lines(&path)?;
        match &first {
            None => first = Some((path.clone(), lines.len())),
            Some((left, left_lines)) if *left_lines != lines.len() => {
                return Err(Error::Alignment {
                    left: left.clone(),
                    left_lines: *left_lines,
                    right: path,
                    right_lines: lines.len(),
                });
            }
            Some(_) => {}
        }
        languages.insert(code.to_string(), lines);
    }
    ParallelCorpus::from_languages(languages)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    PromptSelection,
    FewshotReserve,
}

impl Split {
    pub const ALL: [Split; 4] = [Self::Train, Self::Validation, Self::PromptSelection, Self::FewshotReserve];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::PromptSelection => "prompt_selection",
            Self::FewshotReserve => "fewshot_reserve",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|split| split.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown split {s:?}")))
    }
}

/// Sizes of train / validation / prompt-selection / few-shot reserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub prompt_selection: usize,
    pub fewshot_reserve: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 787,
            validation: 100,
            prompt_selection: 100,
            fewshot_reserve: 10,
        }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.prompt_selection + self.fewshot_reserve
    }

    fn ordered(&self) -> [(Split, usize); 4] {
        [
            (Split::Train, self.train),
            (Split::Validation, self.validation),
            (Split::PromptSelection, self.prompt_selection),
            (Split::FewshotReserve, self.fewshot_reserve),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    assignment: Vec<Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn split_of(&self, index: usize) -> Option<Split> {
        self.assignment.get(index).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Ascending sentence indices assigned to `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.iter().filter(|s| **s == split).count()
    }

    /// `index<TAB>split` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("index\tsplit\n");
        for (i, split) in self.assignment.iter().enumerate() {
            out.push_str(&format!("{i}\t{split}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str, seed: u64) -> Result<Self> {
        let mut assignment = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: "split manifest".into(),
                line: line_no + 1,
                message,
            };
            let (index, split) = line.split_once('\t').ok_or_else(|| err("missing tab".into()))?;
            let index: usize = index.parse().map_err(|e| err(format!("{e}")))?;
            if index != assignment.len() {
                return Err(err(format!("expected index {}, got {index}", assignment.len())));
            }
            assignment.push(split.parse().map_err(|e: Error| err(e.to_string()))?);
        }
        Ok(Self { assignment, seed })
    }
}

/// Shuffles `0..n` with the seeded generator and deals the permutation out in
/// order: train, validation, prompt selection, few-shot reserve.
pub fn split_dev(n: usize, sizes: SplitSizes, seed: u64) -> Result<SplitAssignment> {
    if sizes.total() != n {
        return Err(Error::Validation(format!(
            "split sizes sum to {} but corpus has {n} sentences",
            sizes.total()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut order, &mut rng::seeded(seed));
    let mut assignment = vec![Split::Train; n];
    let mut cursor = 0;
    for (split, size) in sizes.ordered() {
        for &index in &order[cursor..cursor + size] {
            assignment[index] = split;
        }
        cursor += size;
    }
    Ok(SplitAssignment { assignment, seed })
}

/// Samples `n_shots` distinct indices from the few-shot reserve.
pub fn sample_fewshot(assignment: &SplitAssignment, n_shots: usize, seed: u64) -> Result<Vec<usize>> {
    let reserve = assignment.indices(Split::FewshotReserve);
    if n_shots > reserve.len() {
        return Err(Error::InsufficientCandidates {
            context: "few-shot reserve".into(),
            needed: n_shots,
            available: reserve.len(),
        });
    }
    Ok(rng::sample_without_replacement(&reserve, n_shots, &mut rng::seeded(seed)))
}

/// NFC, internal whitespace runs collapsed to one space, trimmed.
pub fn normalize_sentence(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOrigin {
    SeedCorpus,
    WmtPool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistillPool {
    pub sentences: Vec<String>,
    pub origins: Vec<PoolOrigin>,
    /// Seed sentences dropped because they appear in the excluded set.
    pub dropped_seed: usize,
}

impl DistillPool {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn count(&self, origin: PoolOrigin) -> usize {
        self.origins.iter().filter(|o| **o == origin).count()
    }
}

/// All seed sentences plus `target_wmt` seeded-sampled WMT sentences. Any
/// sentence whose normalized form is in `excluded` is removed before sampling;
/// duplicate WMT lines collapse to one candidate.
pub fn build_distill_pool(
    seed_sentences: &[String],
    wmt_sentences: &[String],
    excluded: &[String],
    target_wmt: usize,
    seed: u64,
) -> Result<DistillPool> {
    let excluded: HashSet<String> = excluded.iter().map(|s| normalize_sentence(s)).collect();

    let mut pool = DistillPool::default();
    for sentence in seed_sentences {
        let norm = normalize_sentence(sentence);
        if excluded.contains(&norm) {
            pool.dropped_seed += 1;
            continue;
        }
        pool.sentences.push(norm);
        pool.origins.push(PoolOrigin::SeedCorpus);
    }

    let mut seen = HashSet::new();
    let candidates: Vec<String> = wmt_sentences
        .iter()
        .map(|s| normalize_sentence(s))
        .filter(|s| !s.is_empty() && !excluded.contains(s) && seen.insert(s.clone()))
        .collect();
    if target_wmt > candidates.len() {
        return Err(Error::InsufficientCandidates {
            context: "WMT sentences after exclusion".into(),
            needed: target_wmt,
            available: candidates.len(),
        });
    }
    let sampled = rng::sample_without_replacement(&candidates, target_wmt, &mut rng::seeded(seed));
    pool.origins.extend(std::iter::repeat_n(PoolOrigin::WmtPool, sampled.len()));
    pool.sentences.extend(sampled);
    Ok(pool)
}
