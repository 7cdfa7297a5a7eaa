use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::langdist::AuxPlan;
use crate::language::{LanguageRegistry, ENGLISH};
use crate::promptgen::{parse_completion, render, render_teacher_fewshot, PromptInstance};

use super::{run_ordered, DecodeParams, LlmClient};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherFailure {
    pub index: usize,
    pub language: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CandidateLine {
    index: usize,
    language: String,
    text: String,
}

/// Teacher translations keyed by (sentence index, language code).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateStore {
    pub candidates: BTreeMap<(usize, String), String>,
    pub failures: Vec<TeacherFailure>,
}

impl CandidateStore {
    pub fn get(&self, index: usize, language: &str) -> Option<&str> {
        self.candidates.get(&(index, language.to_string())).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn completion_ratio(&self) -> f64 {
        let requested = self.candidates.len() + self.failures.len();
        if requested == 0 {
            1.0
        } else {
            self.candidates.len() as f64 / requested as f64
        }
    }

    /// `{"index","language","text"}` per line, ordered by key.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ((index, language), text) in &self.candidates {
            let line = CandidateLine {
                index: *index,
                language: language.clone(),
                text: text.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("candidate line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut store = Self::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: CandidateLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                source_name: "candidates".into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            store.candidates.insert((parsed.index, parsed.language), parsed.text);
        }
        Ok(store)
    }
}

/// Distinct (sentence, language) generations the teacher must produce: every
/// auxiliary plus the target itself, shared across targets.
pub fn teacher_requests(plans: &BTreeMap<String, AuxPlan>, sentence_indices: &[usize]) -> BTreeSet<(usize, String)> {
    let mut requests = BTreeSet::new();
    for plan in plans.values() {
        for &index in sentence_indices {
            requests.insert((index, plan.target.clone()));
            for aux in &plan.auxiliaries {
                requests.insert((index, aux.clone()));
            }
        }
    }
    requests
}

/// Few-shot teacher translations for every auxiliary language and draft target.
/// Item failures are recorded in the store rather than aborting the pass.
pub fn teacher_pass(
    corpus: &ParallelCorpus,
    sentence_indices: &[usize],
    plans: &BTreeMap<String, AuxPlan>,
    fewshot: &[usize],
    registry: &LanguageRegistry,
    client: &LlmClient,
    params: &DecodeParams,
) -> Result<CandidateStore> {
    let requests: Vec<(usize, String)> = teacher_requests(plans, sentence_indices).into_iter().collect();
    if requests.is_empty() {
        return Ok(CandidateStore::default());
    }
    if fewshot.is_empty() {
        return Err(Error::Validation("teacher pass needs at least one few-shot example".into()));
    }
    let english = corpus.sentences(ENGLISH)?;
    let generate_one = |(index, language): &(usize, String)| -> Result<String> {
        let spec = registry.get(language)?;
        let shots = fewshot
            .iter()
            .map(|&i| Ok((english[i].clone(), corpus.sentence(language, i)?.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let source = english
            .get(*index)
            .ok_or_else(|| Error::Validation(format!("sentence index {index} out of range")))?;
        let prompt = render_teacher_fewshot(spec, &shots, source)?;
        let record = client.generate(&prompt, params)?;
        Ok(parse_completion(&record.output, &prompt.completion_prefix))
    };
    let results = run_ordered(&requests, client.config().max_concurrency, generate_one);

    let mut store = CandidateStore::default();
    for ((index, language), result) in requests.into_iter().zip(results) {
        match result {
            Ok(text) => {
                store.candidates.insert((index, language), text);
            }
            Err(e) => {
                log::warn!("teacher: sentence {index} {language}: {e}");
                store.failures.push(TeacherFailure {
                    index,
                    language,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentResult {
    pub translation: String,
    pub prompt_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Renders, generates and parses every instance; output order matches input.
pub fn student_pass(instances: &[PromptInstance], client: &LlmClient, params: &DecodeParams) -> Vec<StudentResult> {
    run_ordered(instances, client.config().max_concurrency, |instance| {
        let prompt = match render(instance) {
            Ok(p) => p,
            Err(e) => {
                return StudentResult {
                    translation: String::new(),
                    prompt_digest: String::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        match client.generate(&prompt, params) {
            Ok(record) => StudentResult {
                translation: parse_completion(&record.output, &prompt.completion_prefix),
                prompt_digest: prompt.digest,
                error: None,
            },
            Err(e) => StudentResult {
                translation: String::new(),
                prompt_digest: prompt.digest,
                error: Some(e.to_string()),
            },
        }
    })
}
