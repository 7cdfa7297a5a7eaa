//! Segment-level attention attribution and token highlight classes computed
//! from attention dumps produced by an external model runner.
//!
//! Dump weights are expected to be averaged over heads and layers already.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the segment covering generated tokens.
pub const GENERATED: &str = "generated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub context_tokens: Vec<String>,
    pub generated_tokens: Vec<String>,
    /// Segment name to half-open `[start, end)` over context followed by generated tokens.
    pub segments: BTreeMap<String, [usize; 2]>,
    /// One row per generated token; rows may be shorter than the full sequence
    /// (causal masking), missing columns count as zero.
    pub weights: Vec<Vec<f64>>,
}

impl AttentionDump {
    pub fn seq_len(&self) -> usize {
        self.context_tokens.len() + self.generated_tokens.len()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        let n = self.context_tokens.len();
        if index < n {
            Some(&self.context_tokens[index])
        } else {
            self.generated_tokens.get(index - n).map(String::as_str)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.seq_len();
        if self.weights.len() != self.generated_tokens.len() {
            return Err(Error::Validation(format!(
                "{} weight rows for {} generated tokens",
                self.weights.len(),
                self.generated_tokens.len()
            )));
        }
        for (g, row) in self.weights.iter().enumerate() {
            if row.len() > n {
                return Err(Error::Validation(format!("weight row {g} has {} columns, sequence has {n}", row.len())));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Validation(format!("weight row {g} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + 1e-6 {
                return Err(Error::Validation(format!("weight row {g} sums to {sum}")));
            }
        }
        let mut ranges: Vec<(usize, usize, &str)> =
            self.segments.iter().map(|(name, [s, e])| (*s, *e, name.as_str())).collect();
        ranges.sort();
        let mut cursor = 0;
        for (start, end, name) in ranges {
            if start >= end {
                return Err(Error::Validation(format!("segment {name} is empty or reversed")));
            }
            if start < cursor {
                return Err(Error::Validation(format!("segment {name} overlaps the previous segment")));
            }
            if start > cursor {
                return Err(Error::Validation(format!("gap before segment {name} at {cursor}..{start}")));
            }
            cursor = end;
        }
        if cursor != n {
            return Err(Error::Validation(format!("segments cover {cursor} of {n} tokens")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: Self = serde_json::from_str(text)?;
        dump.validate()?;
        Ok(dump)
    }
}

/// One dump per line.
pub fn load_dumps(path: &Path) -> Result<Vec<AttentionDump>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            AttentionDump::from_json(l).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// How the averaged dump weights are scaled before summation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LayerReduction {
    #[default]
    Mean,
    /// Multiply by the layer count to recover a sum over layers.
    Sum { n_layers: usize },
}

impl LayerReduction {
    fn factor(self) -> f64 {
        match self {
            Self::Mean => 1.0,
            Self::Sum { n_layers } => n_layers as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMass {
    pub raw: f64,
    pub normalized: f64,
    pub len: usize,
    /// Generated tokens attending to themselves.
    pub self_attention: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentAttribution {
    pub segments: BTreeMap<String, SegmentMass>,
}

impl SegmentAttribution {
    pub fn total_raw(&self) -> f64 {
        self.segments.values().map(|s| s.raw).sum()
    }
}

pub fn aggregate_segments(dump: &AttentionDump) -> Result<SegmentAttribution> {
    aggregate_segments_with(dump, LayerReduction::Mean)
}

pub fn aggregate_segments_with(dump: &AttentionDump, reduction: LayerReduction) -> Result<SegmentAttribution> {
    dump.validate()?;
    let columns = column_mass_with(dump, reduction);
    let segments = dump
        .segments
        .iter()
        .map(|(name, [start, end])| {
            let raw: f64 = columns[*start..*end].iter().sum();
            let len = end - start;
            let mass = SegmentMass {
                raw,
                normalized: raw / len as f64,
                len,
                self_attention: name == GENERATED,
            };
            (name.clone(), mass)
        })
        .collect();
    Ok(SegmentAttribution { segments })
}

/// Attention received by each token, summed over generated rows.
pub fn column_mass(dump: &AttentionDump) -> Vec<f64> {
    column_mass_with(dump, LayerReduction::Mean)
}

fn column_mass_with(dump: &AttentionDump, reduction: LayerReduction) -> Vec<f64> {
    let factor = reduction.factor();
    let mut columns = vec![0.0; dump.seq_len()];
    for row in &dump.weights {
        for (c, w) in row.iter().enumerate() {
            columns[c] += w * factor;
        }
    }
    columns
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightBucket {
    pub thresholds: Vec<f64>,
    pub labels: Vec<String>,
}

impl Default for HighlightBucket {
    fn default() -> Self {
        Self {
            thresholds: vec![0.01, 0.06, 0.13, 0.22],
            labels: ["white", "light_gray", "dark_gray", "black", "highlight"].map(String::from).to_vec(),
        }
    }
}

impl HighlightBucket {
    pub fn new(thresholds: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != thresholds.len() + 1 {
            return Err(Error::Validation(format!(
                "{} thresholds need {} labels, got {}",
                thresholds.len(),
                thresholds.len() + 1,
                labels.len()
            )));
        }
        if thresholds.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Validation("thresholds must be strictly ascending".into()));
        }
        Ok(Self { thresholds, labels })
    }

    /// Number of thresholds at or below `mass`.
    pub fn class_of(&self, mass: f64) -> usize {
        self.thresholds.iter().take_while(|t| **t <= mass).count().min(self.labels.len() - 1)
    }

    pub fn label_of(&self, mass: f64) -> &str {
        &self.labels[self.class_of(mass)]
    }
}

pub fn bucket_tokens(per_token_mass: &[f64], bucket: &HighlightBucket) -> Vec<usize> {
    per_token_mass.iter().map(|m| bucket.class_of(*m)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSegment {
    pub n_examples: usize,
    pub mean_raw: f64,
    pub mean_normalized: f64,
    pub self_attention: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub groups: BTreeMap<String, BTreeMap<String, GroupSegment>>,
}

/// Example count, raw sum, normalized sum and self-attention flag.
type SegmentSums = (usize, f64, f64, bool);

/// Per-group mean of each segment's masses. Groups named in `expected_groups`
/// without any example are skipped with a warning.
pub fn render_attribution_report(
    examples: &[(String, SegmentAttribution)],
    expected_groups: &[String],
) -> AttributionReport {
    let mut sums: BTreeMap<String, BTreeMap<String, SegmentSums>> = BTreeMap::new();
    for (group, attribution) in examples {
        let segs = sums.entry(group.clone()).or_default();
        for (name, mass) in &attribution.segments {
            let slot = segs.entry(name.clone()).or_insert((0, 0.0, 0.0, mass.self_attention));
            slot.0 += 1;
            slot.1 += mass.raw;
            slot.2 += mass.normalized;
        }
    }
    for group in expected_groups {
        if !sums.contains_key(group) {
            log::warn!("attention report: group {group} has no examples, skipped");
        }
    }
    let groups = sums
        .into_iter()
        .map(|(group, segs)| {
            let segs = segs
                .into_iter()
                .map(|(name, (n, raw, norm, self_attention))| {
                    let cell = GroupSegment {
                        n_examples: n,
                        mean_raw: raw / n as f64,
                        mean_normalized: norm / n as f64,
                        self_attention,
                    };
                    (name, cell)
                })
                .collect();
            (group, segs)
        })
        .collect();
    AttributionReport { groups }
}

impl AttributionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,segment,n_examples,mean_raw,mean_normalized,self_attention\n");
        for (group, segs) in &self.groups {
            for (name, s) in segs {
                let _ = writeln!(
                    out,
                    "{group},{name},{},{:.9},{:.9},{}",
                    s.n_examples, s.mean_raw, s.mean_normalized, s.self_attention
                );
            }
        }
        out
    }

    /// Share of mean normalized mass per segment (excluding self-attention),
    /// one row per group, ready for a stacked bar chart.
    pub fn stacked_table(&self) -> String {
        let mut segment_names: Vec<&str> = Vec::new();
        for segs in self.groups.values() {
            for (name, s) in segs {
                if !s.self_attention && !segment_names.contains(&name.as_str()) {
                    segment_names.push(name);
                }
            }
        }
        let mut out = format!("| group | {} |\n|{}\n", segment_names.join(" | "), "---|".repeat(segment_names.len() + 1));
        for (group, segs) in &self.groups {
            let total: f64 = segs.values().filter(|s| !s.self_attention).map(|s| s.mean_normalized).sum();
            let cells: Vec<String> = segment_names
                .iter()
                .map(|n| match segs.get(*n) {
                    Some(s) if total > 0.0 => format!("{:.1}%", 100.0 * s.mean_normalized / total),
                    _ => "-".into(),
                })
                .collect();
            let _ = writeln!(out, "| {group} | {} |", cells.join(" | "));
        }
        out
    }
}
