//! Declarative run configuration (TOML). Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mufu_core::attnviz::{HighlightBucket, LayerReduction};
use mufu_core::corpus::{Split, SplitSizes};
use mufu_core::llmclient::{DecodeParams, EndpointConfig};
use mufu_core::metrics::ChrfParams;
use mufu_core::promptgen::PromptVariant;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub splits: Option<SplitSizes>,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub variant: VariantConfig,
    #[serde(default)]
    pub teacher: Option<EndpointSection>,
    #[serde(default)]
    pub student: Option<EndpointSection>,
    #[serde(default)]
    pub teacher_decode: DecodeParams,
    #[serde(default)]
    pub student_decode: DecodeParams,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub kd: Option<KdConfig>,
    #[serde(default)]
    pub attention: Option<AttentionConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub fewshot: u64,
    pub aux: u64,
    #[serde(default)]
    pub pool: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of `<code>.txt` files, English included.
    pub corpus_dir: Option<PathBuf>,
    /// Language registry TSV; the bundled registry when absent.
    pub registry: Option<PathBuf>,
    /// Distance TSV used by `plan.source = "distances"`.
    pub distances: Option<PathBuf>,
    /// Auxiliary registry TSV; the bundled one when absent.
    pub aux_registry: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    /// Rows of the auxiliary registry, truncated to the variant's k.
    #[default]
    Registry,
    /// Closest languages from the distance table, random fallback otherwise.
    Distances,
    FixedHrl,
    /// Registry row merged with the fixed high-resource five.
    MergedHrl,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default)]
    pub source: PlanSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    /// Short variant name such as `mufu5`, `postedit` or `mufu20+cr`.
    pub name: String,
    /// Exemplars in each teacher prompt.
    pub n_shots: usize,
    /// Split whose sentences the student translates and `evaluate` scores.
    pub eval_split: Split,
    /// Split exported for finetuning.
    pub train_split: Split,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            name: "mufu5".into(),
            n_shots: 5,
            eval_split: Split::Validation,
            train_split: Split::Train,
        }
    }
}

impl VariantConfig {
    pub fn parsed(&self) -> Result<PromptVariant> {
        Ok(self.name.parse()?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    #[default]
    Http,
    /// Offline endpoint answering from the corpus itself.
    CorpusLookup,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct EndpointSection {
    #[serde(default)]
    pub kind: EndpointKind,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
}

// `kind` is split off by hand so unknown endpoint keys are still rejected,
// which `flatten` alone does not do.
impl TryFrom<toml::Table> for EndpointSection {
    type Error = toml::de::Error;

    fn try_from(mut table: toml::Table) -> std::result::Result<Self, Self::Error> {
        let kind = match table.remove("kind") {
            Some(v) => v.try_into()?,
            None => EndpointKind::default(),
        };
        let endpoint = toml::Value::Table(table).try_into()?;
        Ok(Self { kind, endpoint })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChrfLevel {
    #[default]
    Corpus,
    Sentence,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub chrf: ChrfParams,
    #[serde(default)]
    pub level: ChrfLevel,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// External score CSV (`pair,system,chrf,bleu,n`) or `"bundled"` for the
    /// shipped per-pair table; when absent the `evaluate` output is used.
    pub score_csv: Option<String>,
    #[serde(default)]
    pub systems: Vec<String>,
    #[serde(default)]
    pub benchmarks: Vec<String>,
}

/// Training settings recorded alongside exported finetuning data. Nothing is
/// trained here; the values travel in the `export-finetune` manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    /// Rerun rate when training fails to converge.
    pub fallback_learning_rate: Option<f64>,
    /// Low-rank adapter rank; full-parameter updates when absent.
    pub lora_rank: Option<u32>,
    pub checkpoint_selection: String,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            learning_rate: 1e-4,
            fallback_learning_rate: Some(1e-5),
            lora_rank: None,
            checkpoint_selection: "best validation chrF on very-low and low resource targets".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdConfig {
    /// JSON lines of `{"source","target","translation"}`.
    pub outputs: PathBuf,
    /// Seed sentences, one per line; the English train split when absent.
    pub seed_sentences: Option<PathBuf>,
    pub wmt_sentences: Option<PathBuf>,
    #[serde(default)]
    pub target_wmt: usize,
    /// Sentences never allowed in the pool; the English eval split when absent.
    pub excluded: Option<PathBuf>,
    #[serde(default = "default_floor")]
    pub coverage_floor: f64,
    /// Variant that produced the outputs; the run variant when absent.
    pub variant: Option<String>,
}

fn default_floor() -> f64 {
    0.95
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionDumpSource {
    pub group: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub dumps: Vec<AttentionDumpSource>,
    #[serde(default)]
    pub bucket: Option<HighlightBucket>,
    #[serde(default)]
    pub layer_reduction: LayerReduction,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.data.corpus_dir,
            &mut self.data.registry,
            &mut self.data.distances,
            &mut self.data.aux_registry,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(csv) = &mut self.report.score_csv {
            if csv != "bundled" && Path::new(csv).is_relative() {
                *csv = base.join(&*csv).display().to_string();
            }
        }
        if let Some(kd) = &mut self.kd {
            fix(&mut kd.outputs);
            for p in [&mut kd.seed_sentences, &mut kd.wmt_sentences, &mut kd.excluded].into_iter().flatten() {
                fix(p);
            }
        }
        if let Some(att) = &mut self.attention {
            for dump in &mut att.dumps {
                fix(&mut dump.path);
            }
        }
    }

    /// Checks that referenced paths exist and that sections are consistent.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |p: &Path, what: &str| -> Result<()> {
            if !p.exists() {
                bail!("{what} {} does not exist", p.display());
            }
            Ok(())
        };
        if let Some(p) = &self.data.corpus_dir {
            must_exist(p, "corpus directory")?;
        }
        for (p, what) in [
            (&self.data.registry, "language registry"),
            (&self.data.distances, "distance table"),
            (&self.data.aux_registry, "auxiliary registry"),
        ] {
            if let Some(p) = p {
                must_exist(p, what)?;
            }
        }
        if let Some(csv) = &self.report.score_csv {
            if csv != "bundled" {
                must_exist(Path::new(csv), "score CSV")?;
            }
        }
        if let Some(kd) = &self.kd {
            must_exist(&kd.outputs, "KD outputs")?;
            for (p, what) in [
                (&kd.seed_sentences, "KD seed sentences"),
                (&kd.wmt_sentences, "WMT sentences"),
                (&kd.excluded, "KD exclusion list"),
            ] {
                if let Some(p) = p {
                    must_exist(p, what)?;
                }
            }
            if !(0.0..=1.0).contains(&kd.coverage_floor) {
                bail!("kd.coverage_floor must be within [0, 1]");
            }
        }
        if let Some(att) = &self.attention {
            for dump in &att.dumps {
                must_exist(&dump.path, "attention dump")?;
            }
        }
        self.variant.parsed()?;
        if self.variant.n_shots == 0 {
            bail!("variant.n_shots must be at least 1");
        }
        for section in [&self.teacher, &self.student].into_iter().flatten() {
            section.endpoint.validate()?;
            if section.kind == EndpointKind::Http && section.endpoint.url.is_empty() {
                bail!("endpoint {} needs a url", section.endpoint.name);
            }
        }
        self.teacher_decode.validate()?;
        self.student_decode.validate()?;
        self.metrics.chrf.validate()?;
        if self.finetune.epochs == 0 || self.finetune.learning_rate.is_nan() || self.finetune.learning_rate <= 0.0 {
            bail!("finetune.epochs and finetune.learning_rate must be positive");
        }
        Ok(())
    }

    pub fn split_sizes(&self) -> SplitSizes {
        self.splits.unwrap_or_default()
    }

    pub fn teacher(&self) -> Result<&EndpointSection> {
        self.teacher.as_ref().context("config has no [teacher] endpoint")
    }

    pub fn student(&self) -> Result<&EndpointSection> {
        self.student.as_ref().context("config has no [student] endpoint")
    }

    pub fn corpus_dir(&self) -> Result<&Path> {
        self.data.corpus_dir.as_deref().context("config has no data.corpus_dir")
    }
}
