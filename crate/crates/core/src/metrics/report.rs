use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::{LanguageRegistry, ResourceLevel};

const BUNDLED_SCORES: &str = include_str!("../../data/flores_chrf_by_pair.csv");

/// Pair keys look like `eng_Latn-ace_Latn`; bare codes are accepted too.
pub fn target_of_pair(pair: &str) -> &str {
    pair.split_once('-').map(|(_, t)| t).unwrap_or(pair)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair: String,
    pub system: String,
    pub chrf: f64,
    pub bleu: Option<f64>,
    pub n: usize,
}

impl PairResult {
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        if !in_range(self.chrf) || self.bleu.is_some_and(|b| !in_range(b)) {
            return Err(Error::Validation(format!("{} {}: score out of range", self.pair, self.system)));
        }
        if self.n == 0 {
            return Err(Error::Validation(format!("{} {}: n must be >= 1", self.pair, self.system)));
        }
        Ok(())
    }
}

/// Long-format score table, CSV header `pair,system,chrf,bleu,n`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<PairResult>,
}

impl ScoreTable {
    pub fn from_rows(rows: Vec<PairResult>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for row in &rows {
            row.validate()?;
            if !seen.insert((row.pair.as_str(), row.system.as_str())) {
                return Err(Error::Validation(format!("duplicate score for {} {}", row.pair, row.system)));
            }
        }
        Ok(Self { rows })
    }

    /// Per-pair chrF for four systems over the 201 FLORES devtest directions.
    pub fn bundled() -> Self {
        Self::parse_csv(BUNDLED_SCORES, "flores_chrf_by_pair.csv").expect("bundled scores parse")
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn parse_csv(text: &str, source_name: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, record) in reader.deserialize::<PairResult>().enumerate() {
            rows.push(record.map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 2,
                message: e.to_string(),
            })?);
        }
        Self::from_rows(rows)
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row).expect("in-memory csv write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf8 csv")
    }

    pub fn systems(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !out.contains(&row.system.as_str()) {
                out.push(&row.system);
            }
        }
        out
    }

    pub fn chrf_by_pair(&self, system: &str) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .filter(|r| r.system == system)
            .map(|r| (r.pair.clone(), r.chrf))
            .collect()
    }

    pub fn push(&mut self, row: PairResult) -> Result<()> {
        row.validate()?;
        if self.rows.iter().any(|r| r.pair == row.pair && r.system == row.system) {
            return Err(Error::Validation(format!("duplicate score for {} {}", row.pair, row.system)));
        }
        self.rows.push(row);
        Ok(())
    }
}

/// Share of `pairs` where `system` strictly beats `benchmark`, in percent.
pub fn win_percent(
    system: &BTreeMap<String, f64>,
    benchmark: &BTreeMap<String, f64>,
    pairs: &[String],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("win% over an empty pair set".into()));
    }
    let mut wins = 0usize;
    for pair in pairs {
        let s = system.get(pair).ok_or_else(|| Error::Coverage(format!("system has no score for {pair}")))?;
        let b = benchmark
            .get(pair)
            .ok_or_else(|| Error::Coverage(format!("benchmark has no score for {pair}")))?;
        if s > b {
            wins += 1;
        }
    }
    Ok(100.0 * wins as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub mean: f64,
    /// 1.96 × sample standard deviation / √n; 0 when `n == 1`.
    pub ci_halfwidth: f64,
    pub n: usize,
    pub single_pair: bool,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn stratum(values: &[f64]) -> Stratum {
    let n = values.len();
    let m = mean(values);
    let ci = if n > 1 {
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    Stratum {
        mean: m,
        ci_halfwidth: ci,
        n,
        single_pair: n == 1,
    }
}

/// Mean and 95% CI half-width per resource level. Levels without pairs are omitted.
pub fn stratified_report(
    scores: &BTreeMap<String, f64>,
    registry: &LanguageRegistry,
) -> Result<BTreeMap<ResourceLevel, Stratum>> {
    let mut by_level: BTreeMap<ResourceLevel, Vec<f64>> = BTreeMap::new();
    for (pair, score) in scores {
        let code = target_of_pair(pair);
        let level = registry
            .get(code)
            .ok()
            .and_then(|l| l.resource_level)
            .ok_or_else(|| Error::Coverage(format!("{pair} has no resource level")))?;
        by_level.entry(level).or_default().push(*score);
    }
    Ok(by_level.into_iter().map(|(level, v)| (level, stratum(&v))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCell {
    pub system: String,
    pub set: String,
    pub n: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinCell {
    pub system: String,
    pub benchmark: String,
    pub set: String,
    pub n: usize,
    pub win_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCell {
    pub system: String,
    pub level: ResourceLevel,
    #[serde(flatten)]
    pub stratum: Stratum,
}

/// Set names used in [`AggregateReport`].
pub const SET_ALL: &str = "all";
pub const SET_COMMON: &str = "common";
pub const SET_LOW: &str = "low";

/// Means, win tables and strata for a score table.
///
/// * `all`: every pair a system (or system and benchmark) covers.
/// * `common`: pairs covered by every system and benchmark.
/// * `low`: `common` restricted to very-low and low resource targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub systems: Vec<String>,
    pub benchmarks: Vec<String>,
    pub means: Vec<MeanCell>,
    pub wins: Vec<WinCell>,
    pub strata: Vec<StratumCell>,
}

impl AggregateReport {
    pub fn mean(&self, system: &str, set: &str) -> Option<&MeanCell> {
        self.means.iter().find(|c| c.system == system && c.set == set)
    }

    pub fn win(&self, system: &str, benchmark: &str, set: &str) -> Option<&WinCell> {
        self.wins
            .iter()
            .find(|c| c.system == system && c.benchmark == benchmark && c.set == set)
    }

    pub fn strata_for(&self, system: &str) -> Vec<&StratumCell> {
        self.strata.iter().filter(|c| c.system == system).collect()
    }

    /// Long format: `section,system,benchmark,set,level,n,value,ci_halfwidth`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,system,benchmark,set,level,n,value,ci_halfwidth\n");
        for c in &self.means {
            let _ = writeln!(out, "mean,{},,{},,{},{:.4},", csv_field(&c.system), c.set, c.n, c.mean);
        }
        for c in &self.wins {
            let _ = writeln!(
                out,
                "win,{},{},{},,{},{:.4},",
                csv_field(&c.system),
                csv_field(&c.benchmark),
                c.set,
                c.n,
                c.win_percent
            );
        }
        for c in &self.strata {
            let _ = writeln!(
                out,
                "stratum,{},,{},{},{},{:.4},{:.4}",
                csv_field(&c.system),
                SET_COMMON,
                c.level,
                c.stratum.n,
                c.stratum.mean,
                c.stratum.ci_halfwidth
            );
        }
        out
    }

    /// Mean chrF and win% per system against every benchmark over `all`.
    pub fn summary_markdown(&self) -> String {
        let mut header = vec!["System".to_string(), "chrF (all)".into(), format!("chrF ({SET_COMMON})")];
        for b in &self.benchmarks {
            header.push(format!("Win% vs. {b}"));
        }
        let mut rows = Vec::new();
        for s in self.systems.iter().chain(&self.benchmarks) {
            let mut row = vec![s.clone()];
            row.push(self.mean(s, SET_ALL).map_or("-".into(), |c| format!("{:.1}", c.mean)));
            row.push(self.mean(s, SET_COMMON).map_or("-".into(), |c| format!("{:.1}", c.mean)));
            for b in &self.benchmarks {
                row.push(self.win(s, b, SET_ALL).map_or("-".into(), |c| format!("{:.1}", c.win_percent)));
            }
            rows.push(row);
        }
        markdown(&header, &rows)
    }

    /// Win% over the low-resource set, benchmarks as columns.
    pub fn low_resource_markdown(&self) -> String {
        let n = self.wins.iter().find(|c| c.set == SET_LOW).map_or(0, |c| c.n);
        let mut header = vec![format!("System (n = {n})")];
        header.extend(self.benchmarks.iter().cloned());
        let rows = self
            .systems
            .iter()
            .map(|s| {
                let mut row = vec![s.clone()];
                for b in &self.benchmarks {
                    row.push(self.win(s, b, SET_LOW).map_or("-".into(), |c| format!("{:.1}", c.win_percent)));
                }
                row
            })
            .collect::<Vec<_>>();
        markdown(&header, &rows)
    }

    pub fn strata_markdown(&self) -> String {
        let header: Vec<String> = ["System", "Level", "n", "Mean chrF", "95% CI ±"].map(String::from).to_vec();
        let rows = self
            .strata
            .iter()
            .map(|c| {
                vec![
                    c.system.clone(),
                    c.level.to_string(),
                    c.stratum.n.to_string(),
                    format!("{:.1}", c.stratum.mean),
                    if c.stratum.single_pair { "n=1".into() } else { format!("{:.2}", c.stratum.ci_halfwidth) },
                ]
            })
            .collect::<Vec<_>>();
        markdown(&header, &rows)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out
}

fn covered(table: &ScoreTable, system: &str) -> BTreeSet<String> {
    table.rows.iter().filter(|r| r.system == system).map(|r| r.pair.clone()).collect()
}

pub fn build_report(
    table: &ScoreTable,
    registry: &LanguageRegistry,
    systems: &[&str],
    benchmarks: &[&str],
) -> Result<AggregateReport> {
    let everyone: Vec<&str> = systems.iter().chain(benchmarks).copied().collect();
    let mut common: Option<BTreeSet<String>> = None;
    for name in &everyone {
        let pairs = covered(table, name);
        if pairs.is_empty() {
            return Err(Error::Coverage(format!("no scores for system {name:?}")));
        }
        common = Some(match common {
            None => pairs,
            Some(c) => c.intersection(&pairs).cloned().collect(),
        });
    }
    let common: Vec<String> = common.unwrap_or_default().into_iter().collect();
    let low: Vec<String> = common
        .iter()
        .filter(|p| {
            registry
                .get(target_of_pair(p))
                .ok()
                .and_then(|l| l.resource_level)
                .is_some_and(ResourceLevel::is_low)
        })
        .cloned()
        .collect();

    let mut report = AggregateReport {
        systems: systems.iter().map(|s| s.to_string()).collect(),
        benchmarks: benchmarks.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    for name in &everyone {
        let scores = table.chrf_by_pair(name);
        let all: Vec<f64> = scores.values().copied().collect();
        report.means.push(MeanCell {
            system: name.to_string(),
            set: SET_ALL.into(),
            n: all.len(),
            mean: mean(&all),
        });
        if !common.is_empty() {
            let values: Vec<f64> = common.iter().map(|p| scores[p]).collect();
            report.means.push(MeanCell {
                system: name.to_string(),
                set: SET_COMMON.into(),
                n: values.len(),
                mean: mean(&values),
            });
        }
    }
    for system in systems.iter().chain(benchmarks) {
        let s = table.chrf_by_pair(system);
        for bench in benchmarks {
            if bench == system {
                continue;
            }
            let b = table.chrf_by_pair(bench);
            let both: Vec<String> = s.keys().filter(|p| b.contains_key(*p)).cloned().collect();
            for (set, pairs) in [(SET_ALL, &both), (SET_LOW, &low)] {
                if pairs.is_empty() {
                    continue;
                }
                report.wins.push(WinCell {
                    system: system.to_string(),
                    benchmark: bench.to_string(),
                    set: set.into(),
                    n: pairs.len(),
                    win_percent: win_percent(&s, &b, pairs)?,
                });
            }
        }
    }
    for name in &everyone {
        let scores = table.chrf_by_pair(name);
        let restricted: BTreeMap<String, f64> = common.iter().map(|p| (p.clone(), scores[p])).collect();
        for (level, stratum) in stratified_report(&restricted, registry)? {
            report.strata.push(StratumCell {
                system: name.to_string(),
                level,
                stratum,
            });
        }
    }
    Ok(report)
}

/// Pivot with one row per pair and one chrF column per system.
pub fn per_pair_markdown(table: &ScoreTable, registry: &LanguageRegistry) -> String {
    let systems = table.systems();
    let by_system: Vec<BTreeMap<String, f64>> = systems.iter().map(|s| table.chrf_by_pair(s)).collect();
    let pairs: BTreeSet<&str> = table.rows.iter().map(|r| r.pair.as_str()).collect();
    let mut header = vec!["Language".to_string(), "Level".to_string()];
    header.extend(systems.iter().map(|s| s.to_string()));
    let rows = pairs
        .iter()
        .map(|pair| {
            let code = target_of_pair(pair);
            let spec = registry.get(code).ok();
            let mut row = vec![
                spec.map_or(code.to_string(), |l| l.display_name.clone()),
                spec.and_then(|l| l.resource_level).map_or("-".into(), |l| l.to_string()),
            ];
            for scores in &by_system {
                row.push(scores.get(*pair).map_or("-".into(), |v| format!("{v:.1}")));
            }
            row
        })
        .collect::<Vec<_>>();
    markdown(&header, &rows)
}
