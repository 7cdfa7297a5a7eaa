//! Stage execution: dependency checks, stage bodies and manifest bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::info;
use mufu_core::attnviz::{
    aggregate_segments_with, bucket_tokens, load_dumps, render_attribution_report, HighlightBucket,
};
use mufu_core::corpus::{
    build_distill_pool, load_corpus, sample_fewshot, split_dev, ParallelCorpus, PoolOrigin, Split, SplitAssignment,
};
use mufu_core::digest::sha256_hex;
use mufu_core::distill::{export_kd_records, make_kd_dataset, outputs_from_lines, KdOutput};
use mufu_core::langdist::{
    fixed_hrl_plan, merge_hrl_plan, select_auxiliaries, truncate_plan, AuxPlan, AuxRegistry, DistanceTable, Provenance,
};
use mufu_core::language::{LanguageRegistry, ENGLISH};
use mufu_core::llmclient::{
    student_pass, teacher_pass, teacher_requests, CandidateStore, CorpusLookupEndpoint, Endpoint, GenerationCache,
    LlmClient,
};
use mufu_core::metrics::{
    bleu_corpus, build_report, chrf_corpus, chrf_sentence_average, per_pair_markdown, PairResult, ScoreTable,
};
use mufu_core::promptgen::{
    build_finetune_records, pair_name, render, write_jsonl, PromptInstance, PromptKind, PromptVariant,
};
use mufu_core::rng::PRNG_DESCRIPTION;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ChrfLevel, EndpointKind, EndpointSection, PlanSource, RunConfig};
use crate::manifest::{
    file_digest, outputs_intact, read_manifest, stage_dir, write_manifest, DependencyError, Manifest,
};
use crate::stage::Stage;

pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub resume: bool,
    pub dry_run: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ran { endpoint_calls: u64 },
    Skipped,
    DryRun,
}

/// What a stage produced, before it is written to disk.
#[derive(Default)]
struct StageOutput {
    files: Vec<(String, Vec<u8>)>,
    stats: Option<serde_json::Value>,
    metadata: BTreeMap<String, serde_json::Value>,
    endpoint_calls: u64,
}

impl StageOutput {
    fn file(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub pair: String,
    pub target: String,
    pub index: usize,
    pub split: Split,
    pub digest: String,
    pub instance: PromptInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub pair: String,
    pub target: String,
    pub index: usize,
    pub translation: String,
    pub prompt_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Pipeline {
    config: RunConfig,
    registry: LanguageRegistry,
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn from_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn pretty_json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .map(|l| l.trim_end().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        let registry = match &config.data.registry {
            Some(path) => LanguageRegistry::load(path)?,
            None => LanguageRegistry::bundled(),
        };
        Ok(Self { config, registry })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn outdir(&self) -> &Path {
        &self.config.output_dir
    }

    fn external_scores(&self) -> bool {
        self.config.report.score_csv.is_some()
    }

    /// Stages run by `--stage all`, in dependency order.
    pub fn all_stages(&self) -> Vec<Stage> {
        let mut stages = vec![
            Stage::Plan,
            Stage::Split,
            Stage::TeacherRun,
            Stage::BuildPrompts,
            Stage::StudentRun,
            Stage::ExportFinetune,
            Stage::Evaluate,
            Stage::Report,
        ];
        if self.config.kd.is_some() {
            stages.push(Stage::KdExport);
        }
        if self.config.attention.is_some() {
            stages.push(Stage::AttnReport);
        }
        stages
    }

    // ---- fingerprints -------------------------------------------------

    fn corpus_files(&self) -> Result<Vec<(String, PathBuf)>> {
        let Some(dir) = &self.config.data.corpus_dir else {
            return Ok(Vec::new());
        };
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if path.extension().is_some_and(|e| e == "txt") && self.registry.contains(stem) {
                files.push((format!("corpus/{stem}.txt"), path.clone()));
            }
        }
        files.sort();
        Ok(files)
    }

    fn input_files(&self, stage: Stage) -> Result<Vec<(String, PathBuf)>> {
        let data = &self.config.data;
        let mut files = Vec::new();
        fn push(files: &mut Vec<(String, PathBuf)>, name: &str, p: &Option<PathBuf>) {
            if let Some(p) = p {
                files.push((name.to_string(), p.clone()));
            }
        }
        match stage {
            Stage::Plan => {
                push(&mut files, "registry", &data.registry);
                push(&mut files, "distances", &data.distances);
                push(&mut files, "aux_registry", &data.aux_registry);
            }
            Stage::TeacherRun | Stage::BuildPrompts => push(&mut files, "registry", &data.registry),
            Stage::Report => {
                if let Some(csv) = self.config.report.score_csv.as_ref().filter(|c| *c != "bundled") {
                    files.push(("score_csv".into(), PathBuf::from(csv)));
                }
            }
            Stage::KdExport => {
                if let Some(kd) = &self.config.kd {
                    files.push(("kd_outputs".into(), kd.outputs.clone()));
                    push(&mut files, "seed_sentences", &kd.seed_sentences);
                    push(&mut files, "wmt_sentences", &kd.wmt_sentences);
                    push(&mut files, "excluded", &kd.excluded);
                }
            }
            Stage::AttnReport => {
                if let Some(att) = &self.config.attention {
                    for dump in &att.dumps {
                        files.push((format!("dump/{}", dump.group), dump.path.clone()));
                    }
                }
            }
            _ => {}
        }
        if matches!(
            stage,
            Stage::Split | Stage::TeacherRun | Stage::BuildPrompts | Stage::ExportFinetune | Stage::Evaluate | Stage::KdExport
        ) {
            files.extend(self.corpus_files()?);
        }
        Ok(files)
    }

    fn input_digests(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        self.input_files(stage)?
            .into_iter()
            .map(|(name, path)| Ok((name, file_digest(&path)?)))
            .collect()
    }

    fn stage_config(&self, stage: Stage) -> serde_json::Value {
        let c = &self.config;
        let endpoint = |s: &Option<EndpointSection>| {
            s.as_ref().map(|s| json!({"kind": s.kind, "name": s.endpoint.name, "url": s.endpoint.url}))
        };
        match stage {
            Stage::Plan => json!({"targets": c.targets, "plan": c.plan, "variant": c.variant.name}),
            Stage::Split => json!({"splits": c.split_sizes(), "n_shots": c.variant.n_shots}),
            Stage::TeacherRun => json!({"teacher": endpoint(&c.teacher), "decode": c.teacher_decode}),
            Stage::BuildPrompts => json!({"variant": c.variant}),
            Stage::StudentRun => json!({"student": endpoint(&c.student), "decode": c.student_decode}),
            Stage::ExportFinetune => json!({"train_split": c.variant.train_split, "finetune": c.finetune}),
            Stage::Evaluate => json!({"metrics": c.metrics, "eval_split": c.variant.eval_split}),
            Stage::Report => json!({"report": c.report}),
            Stage::KdExport => json!({
                "targets": c.targets,
                "target_wmt": c.kd.as_ref().map(|k| k.target_wmt),
                "coverage_floor": c.kd.as_ref().map(|k| k.coverage_floor),
                "variant": c.kd.as_ref().map(|k| k.variant.clone()),
                "splits": [c.variant.train_split, c.variant.eval_split],
            }),
            Stage::AttnReport => json!({
                "bucket": c.attention.as_ref().map(|a| a.bucket.clone()),
                "layer_reduction": c.attention.as_ref().map(|a| a.layer_reduction),
                "groups": c.attention.as_ref().map(|a| a.dumps.iter().map(|d| d.group.clone()).collect::<Vec<_>>()),
            }),
        }
    }

    fn config_digest(&self, stage: Stage) -> String {
        sha256_hex(serde_json::to_vec(&self.stage_config(stage)).expect("config serializes"))
    }

    fn seeds(&self, stage: Stage) -> BTreeMap<String, u64> {
        let s = &self.config.seeds;
        let pick: &[(&str, u64)] = match stage {
            Stage::Plan => &[("aux", s.aux)],
            Stage::Split => &[("split", s.split), ("fewshot", s.fewshot)],
            Stage::KdExport => &[("pool", s.pool)],
            _ => &[],
        };
        pick.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    // ---- freshness ----------------------------------------------------

    /// Digest of `stage`'s manifest if it exists and still matches the
    /// current config, inputs, outputs and upstream manifests.
    fn check_fresh(&self, stage: Stage, needed_by: Stage) -> Result<String> {
        let stale = |reason: String| DependencyError::Stale {
            stage: stage.name().into(),
            needed_by: needed_by.name().into(),
            reason,
        };
        let Some((manifest, digest)) = read_manifest(self.outdir(), stage)? else {
            return Err(DependencyError::Missing {
                stage: stage.name().into(),
                needed_by: needed_by.name().into(),
            }
            .into());
        };
        if manifest.config_digest != self.config_digest(stage) {
            return Err(stale("configuration changed".into()).into());
        }
        if manifest.inputs != self.input_digests(stage)? {
            return Err(stale("input files changed".into()).into());
        }
        if let Some(reason) = outputs_intact(self.outdir(), &manifest)? {
            return Err(stale(reason).into());
        }
        for up in stage.upstream(self.external_scores()) {
            let current = self.check_fresh(*up, stage)?;
            if manifest.upstream.get(up.name()) != Some(&current) {
                return Err(stale(format!("upstream `{up}` was rerun")).into());
            }
        }
        Ok(digest)
    }

    fn check_upstream(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        stage
            .upstream(self.external_scores())
            .iter()
            .map(|up| Ok((up.name().to_string(), self.check_fresh(*up, stage)?)))
            .collect()
    }

    pub fn run(&self, stage: Stage, opts: RunOptions) -> Result<Outcome> {
        let upstream = self.check_upstream(stage)?;
        if opts.resume && self.check_fresh(stage, stage).is_ok() {
            info!("{stage}: up to date, skipped");
            return Ok(Outcome::Skipped);
        }
        if opts.dry_run {
            self.describe(stage)?;
            return Ok(Outcome::DryRun);
        }
        let output = self.execute(stage)?;
        let dir = stage_dir(self.outdir(), stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        let mut outputs = BTreeMap::new();
        for (name, bytes) in &output.files {
            std::fs::write(dir.join(name), bytes)?;
            outputs.insert(name.clone(), sha256_hex(bytes));
        }
        let manifest = Manifest {
            stage: stage.name().into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            prng: PRNG_DESCRIPTION.into(),
            config_digest: self.config_digest(stage),
            seeds: self.seeds(stage),
            inputs: self.input_digests(stage)?,
            outputs,
            upstream,
            metadata: output.metadata.clone(),
        };
        write_manifest(self.outdir(), &manifest)?;
        if let Some(stats) = &output.stats {
            std::fs::write(dir.join(STATS_FILE), pretty_json(stats)?)?;
        }
        info!("{stage}: wrote {} files to {}", output.files.len(), dir.display());
        Ok(Outcome::Ran {
            endpoint_calls: output.endpoint_calls,
        })
    }

    fn describe(&self, stage: Stage) -> Result<()> {
        let dir = stage_dir(self.outdir(), stage);
        match stage {
            Stage::TeacherRun => {
                let plans = self.load_plans()?;
                let (split, _) = self.load_split()?;
                let n = teacher_requests(&plans, &teacher_indices(&split)).len();
                println!("{stage}: would request {n} teacher generations into {}", dir.display());
            }
            Stage::StudentRun => {
                let n = self.eval_records()?.len();
                println!("{stage}: would run the student on {n} prompts into {}", dir.display());
            }
            _ => println!("{stage}: would write {}", dir.display()),
        }
        Ok(())
    }

    fn execute(&self, stage: Stage) -> Result<StageOutput> {
        match stage {
            Stage::Plan => self.stage_plan(),
            Stage::Split => self.stage_split(),
            Stage::TeacherRun => self.stage_teacher(),
            Stage::BuildPrompts => self.stage_build_prompts(),
            Stage::StudentRun => self.stage_student(),
            Stage::ExportFinetune => self.stage_export_finetune(),
            Stage::Evaluate => self.stage_evaluate(),
            Stage::Report => self.stage_report(),
            Stage::KdExport => self.stage_kd(),
            Stage::AttnReport => self.stage_attention(),
        }
    }

    // ---- shared loaders -----------------------------------------------

    fn targets(&self) -> Result<Vec<String>> {
        if !self.config.targets.is_empty() {
            for t in &self.config.targets {
                self.registry.get(t)?;
            }
            return Ok(self.config.targets.clone());
        }
        if self.config.data.corpus_dir.is_some() {
            Ok(self
                .corpus_files()?
                .into_iter()
                .filter_map(|(name, _)| name.strip_prefix("corpus/")?.strip_suffix(".txt").map(String::from))
                .filter(|c| c != ENGLISH)
                .collect())
        } else {
            Ok(self.registry.codes().filter(|c| *c != ENGLISH).map(String::from).collect())
        }
    }

    fn corpus(&self) -> Result<ParallelCorpus> {
        let files = self.corpus_files()?;
        let codes: Vec<&str> = files
            .iter()
            .filter_map(|(name, _)| name.strip_prefix("corpus/")?.strip_suffix(".txt"))
            .collect();
        if !codes.contains(&ENGLISH) {
            bail!("corpus directory has no {ENGLISH}.txt");
        }
        Ok(load_corpus(self.config.corpus_dir()?, &codes)?)
    }

    fn variant(&self) -> Result<PromptVariant> {
        self.config.variant.parsed()
    }

    fn load_plans(&self) -> Result<BTreeMap<String, AuxPlan>> {
        let path = stage_dir(self.outdir(), Stage::Plan).join("plans.tsv");
        let mut plans = BTreeMap::new();
        for row in read_lines(&path)?.iter().skip(1) {
            let plan = AuxPlan::from_tsv_row(row)?;
            plans.insert(plan.target.clone(), plan);
        }
        Ok(plans)
    }

    fn load_split(&self) -> Result<(SplitAssignment, Vec<usize>)> {
        let dir = stage_dir(self.outdir(), Stage::Split);
        let split = SplitAssignment::from_tsv(&std::fs::read_to_string(dir.join("split.tsv"))?, self.config.seeds.split)?;
        let fewshot = read_lines(&dir.join("fewshot.tsv"))?
            .iter()
            .skip(1)
            .map(|l| l.parse::<usize>().context("few-shot index"))
            .collect::<Result<Vec<_>>>()?;
        Ok((split, fewshot))
    }

    fn load_candidates(&self) -> Result<CandidateStore> {
        let path = stage_dir(self.outdir(), Stage::TeacherRun).join("candidates.jsonl");
        Ok(CandidateStore::from_jsonl(&std::fs::read_to_string(path)?)?)
    }

    fn prompt_records(&self) -> Result<Vec<PromptRecord>> {
        from_jsonl(&stage_dir(self.outdir(), Stage::BuildPrompts).join("prompts.jsonl"))
    }

    fn eval_records(&self) -> Result<Vec<PromptRecord>> {
        let split = self.config.variant.eval_split;
        Ok(self.prompt_records()?.into_iter().filter(|r| r.split == split).collect())
    }

    fn client(&self, section: &EndpointSection) -> Result<LlmClient> {
        let endpoint: Arc<dyn Endpoint> = match section.kind {
            EndpointKind::Http => Arc::new(section.endpoint.http_endpoint()?),
            EndpointKind::CorpusLookup => {
                Arc::new(CorpusLookupEndpoint::new(&section.endpoint.name, self.corpus()?, &self.registry)?)
            }
        };
        let cache_path = self.outdir().join("cache").join(format!("{}.jsonl", section.endpoint.name));
        let cache = Arc::new(GenerationCache::open(&cache_path)?);
        Ok(LlmClient::new(endpoint, section.endpoint.clone(), cache)?)
    }

    // ---- stages -------------------------------------------------------

    fn stage_plan(&self) -> Result<StageOutput> {
        let variant = self.variant()?;
        let k = variant.n_auxiliaries();
        let seed = self.config.seeds.aux;
        let source = self.config.plan.source;
        let aux_registry = || -> Result<AuxRegistry> {
            Ok(match &self.config.data.aux_registry {
                Some(p) => AuxRegistry::load(p)?,
                None => AuxRegistry::bundled(),
            })
        };
        let distances = match &self.config.data.distances {
            Some(p) => DistanceTable::load(p)?,
            None => DistanceTable::from_entries(Vec::new())?,
        };
        let registry_rows = match source {
            PlanSource::Registry | PlanSource::MergedHrl => Some(aux_registry()?),
            _ => None,
        };
        let row = |t: &str| -> Result<&AuxPlan> {
            registry_rows
                .as_ref()
                .and_then(|r| r.get(t))
                .with_context(|| format!("auxiliary registry has no row for {t}"))
        };

        let mut tsv = String::from("target\tprovenance\tauxiliaries\n");
        for target in self.targets()? {
            let plan = match source {
                PlanSource::Registry => truncate_plan(row(&target)?, k)?,
                PlanSource::Distances if k == 0 => AuxPlan::new(&target, Vec::new(), Provenance::DistanceRanked)?,
                PlanSource::Distances => select_auxiliaries(&target, k, &distances, &self.registry, seed)?,
                PlanSource::FixedHrl => {
                    if k != 5 {
                        bail!("plan.source = fixed_hrl needs a five-auxiliary variant, got {variant}");
                    }
                    fixed_hrl_plan(&target, &self.registry)?
                }
                PlanSource::MergedHrl => {
                    if k != 25 {
                        bail!("plan.source = merged_hrl needs a 25-auxiliary variant, got {variant}");
                    }
                    merge_hrl_plan(row(&target)?, &target, &distances, &self.registry, seed)?
                }
            };
            tsv.push_str(&plan.to_tsv_row());
            tsv.push('\n');
        }
        let mut out = StageOutput::default();
        out.file("plans.tsv", tsv);
        Ok(out)
    }

    fn stage_split(&self) -> Result<StageOutput> {
        let english = load_corpus(self.config.corpus_dir()?, &[ENGLISH])?;
        let split = split_dev(english.n_sentences(), self.config.split_sizes(), self.config.seeds.split)?;
        let fewshot = sample_fewshot(&split, self.config.variant.n_shots, self.config.seeds.fewshot)?;
        let mut fewshot_tsv = String::from("index\n");
        for i in &fewshot {
            fewshot_tsv.push_str(&format!("{i}\n"));
        }
        let mut out = StageOutput::default();
        out.file("split.tsv", split.to_tsv());
        out.file("fewshot.tsv", fewshot_tsv);
        Ok(out)
    }

    fn stage_teacher(&self) -> Result<StageOutput> {
        let corpus = self.corpus()?;
        let plans = self.load_plans()?;
        let (split, fewshot) = self.load_split()?;
        let client = self.client(self.config.teacher()?)?;
        let indices = teacher_indices(&split);
        let store = teacher_pass(
            &corpus,
            &indices,
            &plans,
            &fewshot,
            &self.registry,
            &client,
            &self.config.teacher_decode,
        )?;
        let mut out = StageOutput::default();
        out.file("candidates.jsonl", store.to_jsonl());
        out.file("failures.jsonl", to_jsonl(&store.failures)?);
        out.endpoint_calls = client.calls();
        out.stats = Some(json!({
            "endpoint_calls": client.calls(),
            "requests": store.len() + store.failures.len(),
            "completion_ratio": store.completion_ratio(),
        }));
        Ok(out)
    }

    fn stage_build_prompts(&self) -> Result<StageOutput> {
        let corpus = self.corpus()?;
        let plans = self.load_plans()?;
        let (split, fewshot) = self.load_split()?;
        let store = self.load_candidates()?;
        let variant = self.variant()?;
        let english = corpus.sentences(ENGLISH)?;
        let splits = [self.config.variant.train_split, self.config.variant.eval_split];
        let mut indices: Vec<(usize, Split)> = splits
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .flat_map(|s| split.indices(*s).into_iter().map(move |i| (i, *s)))
            .collect();
        indices.sort();

        let mut records = Vec::new();
        let mut skipped = 0usize;
        for (target, plan) in &plans {
            let spec = self.registry.get(target)?;
            for &(index, which) in &indices {
                let mut instance = PromptInstance::new(variant, &english[index], spec.clone());
                let mut complete = true;
                if variant.n_auxiliaries() > 0 {
                    let mut candidates = Vec::new();
                    for aux in &plan.auxiliaries {
                        match store.get(index, aux) {
                            Some(text) => candidates.push((self.registry.get(aux)?.clone(), text.to_string())),
                            None => complete = false,
                        }
                    }
                    instance = instance.with_candidates(candidates);
                }
                if variant.needs_draft() {
                    match store.get(index, target) {
                        Some(draft) => instance = instance.with_draft(draft),
                        None => complete = false,
                    }
                }
                if let PromptKind::TeacherFewshot { .. } = variant.kind {
                    let shots = fewshot
                        .iter()
                        .map(|&i| Ok((english[i].clone(), corpus.sentence(target, i)?.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    instance = instance.with_fewshot(shots);
                }
                if !complete {
                    skipped += 1;
                    continue;
                }
                let rendered = render(&instance)?;
                records.push(PromptRecord {
                    pair: pair_name(target),
                    target: target.clone(),
                    index,
                    split: which,
                    digest: rendered.digest,
                    instance,
                });
            }
        }
        if skipped > 0 {
            log::warn!("build-prompts: {skipped} prompts skipped for missing teacher candidates");
        }
        let mut out = StageOutput::default();
        out.file("prompts.jsonl", to_jsonl(&records)?);
        out.file(
            "summary.json",
            pretty_json(&json!({"variant": variant.to_string(), "records": records.len(), "skipped": skipped}))?,
        );
        Ok(out)
    }

    fn stage_student(&self) -> Result<StageOutput> {
        let records = self.eval_records()?;
        let client = self.client(self.config.student()?)?;
        let instances: Vec<PromptInstance> = records.iter().map(|r| r.instance.clone()).collect();
        let results = student_pass(&instances, &client, &self.config.student_decode);
        let translations: Vec<TranslationRecord> = records
            .iter()
            .zip(results)
            .map(|(r, res)| TranslationRecord {
                pair: r.pair.clone(),
                target: r.target.clone(),
                index: r.index,
                translation: res.translation,
                prompt_digest: res.prompt_digest,
                error: res.error,
            })
            .collect();
        let failed = translations.iter().filter(|t| t.error.is_some()).count();
        let mut out = StageOutput::default();
        out.file("translations.jsonl", to_jsonl(&translations)?);
        out.endpoint_calls = client.calls();
        out.stats = Some(json!({
            "endpoint_calls": client.calls(),
            "prompts": translations.len(),
            "failed": failed,
        }));
        Ok(out)
    }

    fn stage_export_finetune(&self) -> Result<StageOutput> {
        let corpus = self.corpus()?;
        let split = self.config.variant.train_split;
        let records: Vec<PromptRecord> = self.prompt_records()?.into_iter().filter(|r| r.split == split).collect();
        let references = records
            .iter()
            .map(|r| Ok(corpus.sentence(&r.target, r.index)?.to_string()))
            .collect::<Result<Vec<_>>>()?;
        let finetune =
            build_finetune_records(records.iter().zip(&references).map(|(r, reference)| (&r.instance, Some(reference.as_str()))))?;
        let mut bytes = Vec::new();
        write_jsonl(&mut bytes, &finetune)?;
        let mut out = StageOutput::default();
        out.file("finetune.jsonl", bytes);
        out.metadata.insert("finetune".into(), serde_json::to_value(&self.config.finetune)?);
        Ok(out)
    }

    fn stage_evaluate(&self) -> Result<StageOutput> {
        let corpus = self.corpus()?;
        let translations: Vec<TranslationRecord> =
            from_jsonl(&stage_dir(self.outdir(), Stage::StudentRun).join("translations.jsonl"))?;
        let store = self.load_candidates()?;
        let student = self.config.student()?.endpoint.name.clone();
        let teacher = self.config.teacher()?.endpoint.name.clone();

        let mut by_target: BTreeMap<&str, Vec<&TranslationRecord>> = BTreeMap::new();
        for t in &translations {
            by_target.entry(&t.target).or_default().push(t);
        }
        let mut table = ScoreTable::default();
        for (target, items) in by_target {
            let references: Vec<&str> = items
                .iter()
                .map(|t| corpus.sentence(target, t.index))
                .collect::<mufu_core::Result<_>>()?;
            let student_pairs: Vec<(&str, &str)> =
                items.iter().zip(&references).map(|(t, r)| (t.translation.as_str(), *r)).collect();
            let teacher_pairs: Vec<(&str, &str)> = items
                .iter()
                .zip(&references)
                .map(|(t, r)| (store.get(t.index, target).unwrap_or(""), *r))
                .collect();
            for (system, pairs) in [(&student, &student_pairs), (&teacher, &teacher_pairs)] {
                table.push(PairResult {
                    pair: pair_name(target),
                    system: system.clone(),
                    chrf: self.chrf(pairs)?,
                    bleu: Some(bleu_corpus(pairs, 4)?),
                    n: pairs.len(),
                })?;
            }
        }
        let mut out = StageOutput::default();
        out.file("scores.csv", table.to_csv());
        out.file("scores.md", per_pair_markdown(&table, &self.registry));
        Ok(out)
    }

    fn chrf(&self, pairs: &[(&str, &str)]) -> Result<f64> {
        let params = &self.config.metrics.chrf;
        Ok(match self.config.metrics.level {
            ChrfLevel::Corpus => chrf_corpus(pairs, params)?,
            ChrfLevel::Sentence => chrf_sentence_average(pairs, params)?,
        })
    }

    fn stage_report(&self) -> Result<StageOutput> {
        let report_cfg = &self.config.report;
        let table = match report_cfg.score_csv.as_deref() {
            Some("bundled") => ScoreTable::bundled(),
            Some(path) => ScoreTable::load_csv(Path::new(path))?,
            None => ScoreTable::load_csv(&stage_dir(self.outdir(), Stage::Evaluate).join("scores.csv"))?,
        };
        let (systems, benchmarks): (Vec<String>, Vec<String>) = if !report_cfg.systems.is_empty() {
            (report_cfg.systems.clone(), report_cfg.benchmarks.clone())
        } else if report_cfg.score_csv.is_none() {
            (
                vec![self.config.student()?.endpoint.name.clone()],
                vec![self.config.teacher()?.endpoint.name.clone()],
            )
        } else {
            (table.systems().into_iter().map(String::from).collect(), report_cfg.benchmarks.clone())
        };
        let systems: Vec<&str> = systems.iter().map(String::as_str).collect();
        let benchmarks: Vec<&str> = benchmarks.iter().map(String::as_str).collect();
        let report = build_report(&table, &self.registry, &systems, &benchmarks)?;
        let mut out = StageOutput::default();
        out.file("report.csv", report.to_csv());
        out.file("report.json", pretty_json(&report)?);
        out.file("summary.md", report.summary_markdown());
        out.file("low_resource.md", report.low_resource_markdown());
        out.file("strata.md", report.strata_markdown());
        out.file("per_pair.md", per_pair_markdown(&table, &self.registry));
        Ok(out)
    }

    fn stage_kd(&self) -> Result<StageOutput> {
        let kd = self.config.kd.as_ref().context("config has no [kd] section")?;
        let (split, _) = self.load_split()?;
        let english_of = |which: Split| -> Result<Vec<String>> {
            let english = load_corpus(self.config.corpus_dir()?, &[ENGLISH])?;
            let sentences = english.sentences(ENGLISH)?;
            Ok(split.indices(which).into_iter().map(|i| sentences[i].clone()).collect())
        };
        let seed_sentences = match &kd.seed_sentences {
            Some(p) => read_lines(p)?,
            None => english_of(self.config.variant.train_split)?,
        };
        let wmt = match &kd.wmt_sentences {
            Some(p) => read_lines(p)?,
            None => Vec::new(),
        };
        let excluded = match &kd.excluded {
            Some(p) => read_lines(p)?,
            None => english_of(self.config.variant.eval_split)?,
        };
        let pool = build_distill_pool(&seed_sentences, &wmt, &excluded, kd.target_wmt, self.config.seeds.pool)?;
        let targets = self
            .targets()?
            .iter()
            .map(|t| Ok(self.registry.get(t)?.clone()))
            .collect::<Result<Vec<_>>>()?;
        let outputs = outputs_from_lines(&from_jsonl::<KdOutput>(&kd.outputs)?);
        let variant = kd.variant.clone().unwrap_or_else(|| self.config.variant.name.clone());
        let dataset = make_kd_dataset(&pool, &targets, &outputs, &variant, kd.coverage_floor)?;
        let records = export_kd_records(&dataset, &targets)?;

        let pool_lines: Vec<serde_json::Value> = pool
            .sentences
            .iter()
            .zip(&pool.origins)
            .map(|(s, o)| json!({"sentence": s, "origin": o}))
            .collect();
        let mut kd_bytes = Vec::new();
        write_jsonl(&mut kd_bytes, &records)?;
        let mut out = StageOutput::default();
        out.file("pool.jsonl", to_jsonl(&pool_lines)?);
        out.file("kd.jsonl", kd_bytes);
        out.file(
            "summary.json",
            pretty_json(&json!({
                "pool": pool.len(),
                "seed_corpus": pool.count(PoolOrigin::SeedCorpus),
                "wmt_pool": pool.count(PoolOrigin::WmtPool),
                "dropped_seed": pool.dropped_seed,
                "expected": dataset.expected,
                "missing": dataset.missing,
                "flagged": dataset.flagged(),
                "coverage": dataset.coverage(),
                "exported": records.len(),
            }))?,
        );
        Ok(out)
    }

    fn stage_attention(&self) -> Result<StageOutput> {
        let att = self.config.attention.as_ref().context("config has no [attention] section")?;
        let bucket = match &att.bucket {
            Some(b) => HighlightBucket::new(b.thresholds.clone(), b.labels.clone())?,
            None => HighlightBucket::default(),
        };
        let mut examples = Vec::new();
        let mut buckets = Vec::new();
        for source in &att.dumps {
            for (i, dump) in load_dumps(&source.path)?.iter().enumerate() {
                examples.push((source.group.clone(), aggregate_segments_with(dump, att.layer_reduction)?));
                // attention of the final generated token over everything before it
                let Some(row) = dump.weights.last() else { continue };
                let classes = bucket_tokens(row, &bucket);
                let tokens: Vec<(String, String)> = classes
                    .iter()
                    .enumerate()
                    .map(|(c, class)| (dump.token(c).unwrap_or("").to_string(), bucket.labels[*class].clone()))
                    .collect();
                buckets.push(json!({"group": source.group, "example": i, "tokens": tokens}));
            }
        }
        let groups: Vec<String> = att.dumps.iter().map(|d| d.group.clone()).collect();
        let report = render_attribution_report(&examples, &groups);
        let mut out = StageOutput::default();
        out.file("attribution.csv", report.to_csv());
        out.file("attribution.md", report.stacked_table());
        out.file("buckets.jsonl", to_jsonl(&buckets)?);
        Ok(out)
    }
}

/// Every sentence outside the few-shot reserve.
fn teacher_indices(split: &SplitAssignment) -> Vec<usize> {
    (0..split.len())
        .filter(|i| split.split_of(*i) != Some(Split::FewshotReserve))
        .collect()
}

#[cfg(test)]
mod tests;
