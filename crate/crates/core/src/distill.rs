//! Sequence-level distillation data from a finetuned model's translations of
//! the distillation pool.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::DistillPool;
use crate::error::{Error, Result};
use crate::language::LanguageSpec;
use crate::promptgen::{pair_name, render, FinetuneRecord, PromptInstance, PromptVariant};

/// Outputs shorter than this many characters are flagged as degenerate.
pub const MIN_OUTPUT_CHARS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KdRecord {
    pub source: String,
    pub target_code: String,
    pub teacher_output: String,
    /// Prompt variant that elicited the output, e.g. `mufu20`.
    pub variant: String,
    pub flagged_empty: bool,
}

/// One line of a KD outputs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KdOutput {
    pub source: String,
    pub target: String,
    pub translation: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KdDataset {
    pub records: Vec<KdRecord>,
    pub expected: usize,
    pub missing: usize,
}

impl KdDataset {
    pub fn coverage(&self) -> f64 {
        if self.expected == 0 {
            1.0
        } else {
            (self.expected - self.missing) as f64 / self.expected as f64
        }
    }

    pub fn flagged(&self) -> usize {
        self.records.iter().filter(|r| r.flagged_empty).count()
    }
}

pub type KdOutputs = HashMap<(String, String), String>;

pub fn outputs_from_lines(lines: &[KdOutput]) -> KdOutputs {
    lines
        .iter()
        .map(|o| ((o.source.clone(), o.target.clone()), o.translation.clone()))
        .collect()
}

/// Pairs every pool sentence with every target. Missing outputs are counted;
/// coverage under `coverage_floor` is an error.
pub fn make_kd_dataset(
    pool: &DistillPool,
    targets: &[LanguageSpec],
    outputs: &KdOutputs,
    variant: &str,
    coverage_floor: f64,
) -> Result<KdDataset> {
    let mut dataset = KdDataset {
        expected: pool.len() * targets.len(),
        ..Default::default()
    };
    for target in targets {
        for sentence in &pool.sentences {
            let Some(output) = outputs.get(&(sentence.clone(), target.code.clone())) else {
                dataset.missing += 1;
                continue;
            };
            let output = output.trim();
            let flagged = output.chars().count() < MIN_OUTPUT_CHARS;
            if flagged {
                log::info!("kd: degenerate output for {} {:?} excluded", target.code, sentence);
            }
            dataset.records.push(KdRecord {
                source: sentence.clone(),
                target_code: target.code.clone(),
                teacher_output: output.to_string(),
                variant: variant.to_string(),
                flagged_empty: flagged,
            });
        }
    }
    if dataset.missing > 0 {
        log::warn!("kd: {} of {} outputs missing", dataset.missing, dataset.expected);
    }
    let coverage = dataset.coverage();
    if coverage < coverage_floor {
        return Err(Error::Coverage(format!(
            "KD output coverage {coverage:.4} is below the floor {coverage_floor:.4} ({} of {} missing)",
            dataset.missing, dataset.expected
        )));
    }
    Ok(dataset)
}

/// Unflagged records as baseline-prompt finetuning records with origin `kd`.
pub fn export_kd_records(dataset: &KdDataset, targets: &[LanguageSpec]) -> Result<Vec<FinetuneRecord>> {
    let by_code: HashMap<&str, &LanguageSpec> = targets.iter().map(|t| (t.code.as_str(), t)).collect();
    let baseline = PromptVariant::baseline();
    dataset
        .records
        .iter()
        .filter(|r| !r.flagged_empty)
        .map(|r| {
            let target = by_code
                .get(r.target_code.as_str())
                .ok_or_else(|| Error::UnknownLanguage(r.target_code.clone()))?;
            let rendered = render(&PromptInstance::new(baseline, &r.source, (*target).clone()))?;
            Ok(FinetuneRecord {
                prompt: rendered.text,
                target: format!(" {}", r.teacher_output),
                pair: pair_name(&r.target_code),
                variant: baseline.to_string(),
                origin: Some("kd".into()),
            })
        })
        .collect()
}
