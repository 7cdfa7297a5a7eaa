//! Auxiliary-language selection from typological distances.
//!
//! Plans list auxiliaries from farthest to closest, so the closest languages
//! sit right above the target-language draft in a rendered prompt.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::language::{base_code, LanguageRegistry};
use crate::rng;

const BUNDLED_AUX_TABLE: &str = include_str!("../data/auxiliary_languages.tsv");

/// Auxiliary count of a full registry row and of the largest plan variant.
pub const FULL_PLAN_SIZE: usize = 20;
/// Size of a merged plan: a full plan plus the five fixed high-resource languages.
pub const MERGED_PLAN_SIZE: usize = 25;

/// Dutch, Russian, French, Chinese, Spanish.
pub const FIXED_HRL: [&str; 5] = ["nld_Latn", "rus_Cyrl", "fra_Latn", "zho_Hans", "spa_Latn"];
/// Stand-in when the target is itself one of [`FIXED_HRL`].
pub const HRL_SUBSTITUTE: &str = "arb_Arab";

pub fn combined_distance(genetic: f64, geographic: f64) -> Result<f64> {
    for (name, value) in [("genetic", genetic), ("geographic", geographic)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Validation(format!("{name} distance {value} outside [0, 1]")));
        }
    }
    Ok((genetic + geographic) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub target: String,
    pub candidate: String,
    pub genetic: f64,
    pub geographic: f64,
    pub combined: f64,
}

impl DistanceEntry {
    pub fn new(target: &str, candidate: &str, genetic: f64, geographic: f64) -> Result<Self> {
        if target == candidate {
            return Err(Error::Validation(format!("distance entry from {target} to itself")));
        }
        Ok(Self {
            target: target.to_string(),
            candidate: candidate.to_string(),
            genetic,
            geographic,
            combined: combined_distance(genetic, geographic)?,
        })
    }
}

/// Per-pair distances grouped by target.
#[derive(Debug, Clone, Default)]
pub struct DistanceTable {
    by_target: BTreeMap<String, Vec<DistanceEntry>>,
}

impl DistanceTable {
    pub fn from_entries(entries: impl IntoIterator<Item = DistanceEntry>) -> Result<Self> {
        let mut by_target: BTreeMap<String, Vec<DistanceEntry>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for entry in entries {
            if !seen.insert((entry.target.clone(), entry.candidate.clone())) {
                return Err(Error::Validation(format!(
                    "duplicate distance entry {} -> {}",
                    entry.target, entry.candidate
                )));
            }
            by_target.entry(entry.target.clone()).or_default().push(entry);
        }
        Ok(Self { by_target })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `target<TAB>candidate<TAB>genetic<TAB>geographic` rows.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if idx == 0 && fields[0] == "target" {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: idx + 1,
                message,
            };
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", fields.len())));
            }
            let number = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            let entry = DistanceEntry::new(fields[0], fields[1], number(fields[2])?, number(fields[3])?)
                .map_err(|e| err(e.to_string()))?;
            entries.push(entry);
        }
        Self::from_entries(entries)
    }

    pub fn entries_for(&self, target: &str) -> &[DistanceEntry] {
        self.by_target.get(target).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_target(&self, target: &str) -> bool {
        self.by_target.contains_key(target)
    }

    pub fn is_empty(&self) -> bool {
        self.by_target.is_empty()
    }

    /// Candidates for `target` ordered closest first; ties go to the smaller code.
    pub fn ranked_closest_first(&self, target: &str) -> Vec<&DistanceEntry> {
        let mut ranked: Vec<&DistanceEntry> = self.entries_for(target).iter().collect();
        ranked.sort_by(|a, b| {
            a.combined
                .total_cmp(&b.combined)
                .then_with(|| a.candidate.cmp(&b.candidate))
        });
        ranked
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    DistanceRanked,
    RandomFallback { seed: u64 },
    FixedHrl,
    MergedHrl,
    /// Row of a precomputed auxiliary table; `random` carries the row's † marker.
    Registry { random: bool },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DistanceRanked => f.write_str("distance_ranked"),
            Self::RandomFallback { seed } => write!(f, "random_fallback({seed})"),
            Self::FixedHrl => f.write_str("fixed_hrl"),
            Self::MergedHrl => f.write_str("merged_hrl"),
            Self::Registry { random: false } => f.write_str("registry"),
            Self::Registry { random: true } => f.write_str("registry(random)"),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "distance_ranked" => Self::DistanceRanked,
            "fixed_hrl" => Self::FixedHrl,
            "merged_hrl" => Self::MergedHrl,
            "registry" => Self::Registry { random: false },
            "registry(random)" => Self::Registry { random: true },
            _ => {
                let seed = s
                    .strip_prefix("random_fallback(")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| Error::Validation(format!("unknown provenance {s:?}")))?;
                Self::RandomFallback { seed }
            }
        })
    }
}

/// Ordered auxiliaries for one target; index 0 is the farthest language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxPlan {
    pub target: String,
    pub auxiliaries: Vec<String>,
    pub provenance: Provenance,
}

impl AuxPlan {
    pub fn new(target: &str, auxiliaries: Vec<String>, provenance: Provenance) -> Result<Self> {
        let plan = Self {
            target: target.to_string(),
            auxiliaries,
            provenance,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for aux in &self.auxiliaries {
            if aux == &self.target {
                return Err(Error::Validation(format!("{} lists itself as auxiliary", self.target)));
            }
            if !seen.insert(aux) {
                return Err(Error::Validation(format!(
                    "{} lists auxiliary {aux} twice",
                    self.target
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.auxiliaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.auxiliaries.is_empty()
    }

    /// TSV row `target<TAB>provenance<TAB>aux1|aux2|...`.
    pub fn to_tsv_row(&self) -> String {
        format!("{}\t{}\t{}", self.target, self.provenance, self.auxiliaries.join("|"))
    }

    pub fn from_tsv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Validation(format!("plan row needs 3 fields: {row:?}")));
        }
        let auxiliaries = if fields[2].is_empty() {
            Vec::new()
        } else {
            fields[2].split('|').map(str::to_string).collect()
        };
        Self::new(fields[0], auxiliaries, fields[1].parse()?)
    }
}

fn check_request(target: &str, k: usize, registry: &LanguageRegistry) -> Result<()> {
    if k == 0 {
        return Err(Error::Validation("auxiliary count must be at least 1".into()));
    }
    registry.get(target)?;
    let available = registry.len() - 1;
    if k > available {
        return Err(Error::InsufficientCandidates {
            context: format!("auxiliaries for {target}"),
            needed: k,
            available,
        });
    }
    Ok(())
}

/// Per-target sub-seed so that fallback targets sharing a run seed draw independently.
fn fallback_seed(seed: u64, target: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{target}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Registry codes eligible as random auxiliaries: not the target, not one of its
/// script variants, not already `used`. Ascending code order.
fn fallback_pool(target: &str, registry: &LanguageRegistry, used: &BTreeSet<String>) -> Vec<String> {
    let target_base = base_code(target);
    registry
        .codes()
        .filter(|code| *code != target && base_code(code) != target_base && !used.contains(*code))
        .map(str::to_string)
        .collect()
}

/// Picks `k` auxiliaries for `target`.
///
/// With distance entries for the target, returns the `k` closest registry
/// languages ordered farthest to closest. Otherwise draws `k` languages
/// uniformly without replacement from the registry, excluding the target and
/// its script variants.
pub fn select_auxiliaries(
    target: &str,
    k: usize,
    distances: &DistanceTable,
    registry: &LanguageRegistry,
    seed: u64,
) -> Result<AuxPlan> {
    check_request(target, k, registry)?;
    if distances.has_target(target) {
        let ranked: Vec<String> = distances
            .ranked_closest_first(target)
            .into_iter()
            .filter(|e| e.candidate != target && registry.contains(&e.candidate))
            .map(|e| e.candidate.clone())
            .collect();
        if ranked.len() < k {
            return Err(Error::InsufficientCandidates {
                context: format!("distance-ranked auxiliaries for {target}"),
                needed: k,
                available: ranked.len(),
            });
        }
        let mut chosen: Vec<String> = ranked.into_iter().take(k).collect();
        chosen.reverse();
        return AuxPlan::new(target, chosen, Provenance::DistanceRanked);
    }

    let pool = fallback_pool(target, registry, &BTreeSet::new());
    if pool.len() < k {
        return Err(Error::InsufficientCandidates {
            context: format!("random auxiliaries for {target}"),
            needed: k,
            available: pool.len(),
        });
    }
    let mut rng = rng::seeded(fallback_seed(seed, target));
    let chosen = rng::sample_without_replacement(&pool, k, &mut rng);
    AuxPlan::new(target, chosen, Provenance::RandomFallback { seed })
}

/// Keeps the `k` closest auxiliaries (the tail of the list).
pub fn truncate_plan(plan: &AuxPlan, k: usize) -> Result<AuxPlan> {
    let n = plan.auxiliaries.len();
    if k > n {
        return Err(Error::InsufficientCandidates {
            context: format!("truncating plan for {}", plan.target),
            needed: k,
            available: n,
        });
    }
    Ok(AuxPlan {
        target: plan.target.clone(),
        auxiliaries: plan.auxiliaries[n - k..].to_vec(),
        provenance: plan.provenance.clone(),
    })
}

/// The five fixed high-resource auxiliaries; a target that is one of them (or
/// a script variant of one) gets Arabic in that slot.
pub fn fixed_hrl_plan(target: &str, registry: &LanguageRegistry) -> Result<AuxPlan> {
    registry.get(target)?;
    let target_base = base_code(target);
    let auxiliaries = FIXED_HRL
        .iter()
        .map(|code| {
            if base_code(code) == target_base {
                HRL_SUBSTITUTE.to_string()
            } else {
                code.to_string()
            }
        })
        .collect();
    AuxPlan::new(target, auxiliaries, Provenance::FixedHrl)
}

/// Merges a 20-language plan with the fixed high-resource five into exactly 25
/// distinct auxiliaries.
///
/// Overlaps are refilled with the next-closest unused distance-ranked
/// languages, or with seeded random picks when the target has no distance
/// entries. Layout: the five high-resource languages, then refills (farthest
/// first), then the remaining base members in their original order.
pub fn merge_hrl_plan(
    base: &AuxPlan,
    target: &str,
    distances: &DistanceTable,
    registry: &LanguageRegistry,
    seed: u64,
) -> Result<AuxPlan> {
    if base.auxiliaries.len() != FULL_PLAN_SIZE {
        return Err(Error::Validation(format!(
            "merge needs a {FULL_PLAN_SIZE}-language base plan, got {}",
            base.auxiliaries.len()
        )));
    }
    if base.target != target {
        return Err(Error::Validation(format!(
            "base plan is for {}, not {target}",
            base.target
        )));
    }
    let hrl = fixed_hrl_plan(target, registry)?;
    let hrl_set: BTreeSet<&String> = hrl.auxiliaries.iter().collect();
    let kept: Vec<String> = base
        .auxiliaries
        .iter()
        .filter(|code| !hrl_set.contains(code))
        .cloned()
        .collect();

    let mut used: BTreeSet<String> = hrl.auxiliaries.iter().chain(kept.iter()).cloned().collect();
    used.insert(target.to_string());
    let missing = MERGED_PLAN_SIZE - (hrl.auxiliaries.len() + kept.len());

    let mut refill: Vec<String> = Vec::with_capacity(missing);
    if missing > 0 {
        if distances.has_target(target) {
            for entry in distances.ranked_closest_first(target) {
                if refill.len() == missing {
                    break;
                }
                if !used.contains(&entry.candidate) && registry.contains(&entry.candidate) {
                    used.insert(entry.candidate.clone());
                    refill.push(entry.candidate.clone());
                }
            }
            // closest-first -> farthest-first
            refill.reverse();
        } else {
            let pool = fallback_pool(target, registry, &used);
            if pool.len() >= missing {
                let mut rng = rng::seeded(fallback_seed(seed, target));
                refill = rng::sample_without_replacement(&pool, missing, &mut rng);
            }
        }
        if refill.len() < missing {
            return Err(Error::InsufficientCandidates {
                context: format!("refilling merged plan for {target}"),
                needed: missing,
                available: refill.len(),
            });
        }
    }

    let auxiliaries: Vec<String> = hrl
        .auxiliaries
        .into_iter()
        .chain(refill)
        .chain(kept)
        .collect();
    AuxPlan::new(target, auxiliaries, Provenance::MergedHrl)
}

/// Precomputed auxiliary plans keyed by target.
#[derive(Debug, Clone, Default)]
pub struct AuxRegistry {
    plans: BTreeMap<String, AuxPlan>,
}

impl AuxRegistry {
    /// The shipped 201-row table of 20 auxiliaries per target.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_AUX_TABLE, "auxiliary_languages.tsv").expect("bundled auxiliary table parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `target<TAB>aux1|...|aux20<TAB>random_flag` rows.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut plans = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if idx == 0 && fields[0] == "target" {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: idx + 1,
                message: format!("row {:?}: {message}", fields[0]),
            };
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            }
            let random = match fields[2] {
                "1" | "true" | "†" => true,
                "0" | "false" | "" => false,
                other => return Err(err(format!("bad random flag {other:?}"))),
            };
            let auxiliaries: Vec<String> = fields[1].split('|').map(|s| s.trim().to_string()).collect();
            if auxiliaries.len() != FULL_PLAN_SIZE {
                return Err(err(format!(
                    "expected {FULL_PLAN_SIZE} auxiliaries, got {}",
                    auxiliaries.len()
                )));
            }
            let plan = AuxPlan::new(fields[0], auxiliaries, Provenance::Registry { random })
                .map_err(|e| err(e.to_string()))?;
            if plans.insert(fields[0].to_string(), plan).is_some() {
                return Err(err("duplicate target".into()));
            }
        }
        Ok(Self { plans })
    }

    pub fn get(&self, target: &str) -> Option<&AuxPlan> {
        self.plans.get(target)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AuxPlan> {
        self.plans.values()
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn into_map(self) -> BTreeMap<String, AuxPlan> {
        self.plans
    }

    /// Distance table whose ranking reproduces every row: the auxiliary at
    /// position `i` of `n` gets genetic = geographic = (n - i) / (n + 1).
    pub fn to_rank_distances(&self) -> DistanceTable {
        let entries = self.plans.values().flat_map(|plan| {
            let n = plan.auxiliaries.len();
            plan.auxiliaries.iter().enumerate().map(move |(i, aux)| {
                let d = (n - i) as f64 / (n + 1) as f64;
                DistanceEntry::new(&plan.target, aux, d, d).expect("rank distance in range")
            })
        });
        DistanceTable::from_entries(entries).expect("rows have distinct auxiliaries")
    }
}
