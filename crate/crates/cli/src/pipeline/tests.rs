use std::path::{Path, PathBuf};

use serde_json::json;

use super::*;
use crate::exit_code;
use crate::fixture::*;

fn pipeline(config: &Path) -> Result<Pipeline> {
    Pipeline::new(RunConfig::load(config)?)
}

fn run(config: &Path, stage: Stage, opts: RunOptions) -> Result<Outcome> {
    pipeline(config)?.run(stage, opts)
}

fn run_all(config: &Path, opts: RunOptions) -> Vec<Outcome> {
    let p = pipeline(config).unwrap();
    p.all_stages().into_iter().map(|s| p.run(s, opts).unwrap()).collect()
}

fn toy() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let config = toy_workspace(tmp.path());
    let out = tmp.path().join("out");
    (tmp, config, out)
}

fn append(config: &Path, extra: &str) {
    let text = std::fs::read_to_string(config).unwrap() + extra;
    std::fs::write(config, text).unwrap();
}

#[test]
fn full_dag_scores_identity_student_at_100() {
    let (_tmp, config, out) = toy();
    run_all(&config, RunOptions::default());
    let scores = ScoreTable::load_csv(&out.join("evaluate/scores.csv")).unwrap();
    assert_eq!(scores.rows.len(), 8);
    for row in &scores.rows {
        assert_eq!(row.chrf, 100.0, "{row:?}");
        assert_eq!(row.n, 8);
    }
    assert!(endpoint_calls(&out, "teacher-run") > 0);
    let plans = std::fs::read_to_string(out.join("plan/plans.tsv")).unwrap();
    assert_eq!(plans.lines().count(), 5);
    let finetune = std::fs::read_to_string(out.join("export-finetune/finetune.jsonl")).unwrap();
    assert_eq!(finetune.lines().count(), 4 * 8);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("export-finetune/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["metadata"]["finetune"]["epochs"], 25);
    for name in ["report.csv", "report.json", "summary.md", "low_resource.md", "strata.md", "per_pair.md"] {
        assert!(out.join("report").join(name).exists(), "{name}");
    }
}

#[test]
fn rerun_is_byte_identical_and_cached() {
    let (_tmp, config, out) = toy();
    run_all(&config, RunOptions::default());
    let first = snapshot(&out);
    let outcomes = run_all(&config, RunOptions::default());
    assert!(outcomes.iter().all(|o| matches!(o, Outcome::Ran { endpoint_calls: 0 })));
    assert_eq!(endpoint_calls(&out, "teacher-run"), 0);
    assert_eq!(endpoint_calls(&out, "student-run"), 0);
    assert_eq!(snapshot(&out), first);
}

#[test]
fn missing_upstream_names_the_stage() {
    let (_tmp, config, _) = toy();
    let err = run(&config, Stage::TeacherRun, RunOptions::default()).unwrap_err();
    assert_eq!(exit_code(&err), 2);
    let msg = err.to_string();
    assert!(msg.starts_with("dependency error") && msg.contains("`plan`"), "{msg}");
}

#[test]
fn modified_upstream_output_is_stale() {
    let (_tmp, config, out) = toy();
    run(&config, Stage::Plan, RunOptions::default()).unwrap();
    run(&config, Stage::Split, RunOptions::default()).unwrap();
    let split = out.join("split/split.tsv");
    let text = std::fs::read_to_string(&split).unwrap();
    std::fs::write(&split, text.replacen("train", "validation", 1)).unwrap();
    let err = run(&config, Stage::TeacherRun, RunOptions::default()).unwrap_err();
    assert_eq!(exit_code(&err), 2);
    assert!(err.to_string().contains("`split`") && err.to_string().contains("modified"), "{err}");
}

#[test]
fn rerunning_upstream_invalidates_downstream() {
    let (_tmp, config, _) = toy();
    run_all(&config, RunOptions::default());
    let toml = std::fs::read_to_string(&config).unwrap().replace("split = 7", "split = 8");
    std::fs::write(&config, toml).unwrap();
    run(&config, Stage::Split, RunOptions::default()).unwrap();
    let err = run(&config, Stage::BuildPrompts, RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("`teacher-run`"), "{err}");
}

#[test]
fn changed_input_file_is_stale() {
    let (tmp, config, _) = toy();
    run(&config, Stage::Plan, RunOptions::default()).unwrap();
    run(&config, Stage::Split, RunOptions::default()).unwrap();
    append(&tmp.path().join("distances.tsv"), "ace_Latn\teng_Latn\t0.9\t0.9\n");
    let err = run(&config, Stage::TeacherRun, RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("input files changed"), "{err}");
}

#[test]
fn resume_skips_fresh_stages() {
    let (_tmp, config, _) = toy();
    run_all(&config, RunOptions::default());
    let outcomes = run_all(&config, RunOptions { resume: true, dry_run: false });
    assert_eq!(outcomes.len(), 8);
    assert!(outcomes.iter().all(|o| *o == Outcome::Skipped));
}

#[test]
fn dry_run_writes_nothing() {
    let (_tmp, config, out) = toy();
    run(&config, Stage::Plan, RunOptions::default()).unwrap();
    run(&config, Stage::Split, RunOptions::default()).unwrap();
    let opts = RunOptions { resume: false, dry_run: true };
    assert_eq!(run(&config, Stage::TeacherRun, opts).unwrap(), Outcome::DryRun);
    assert!(!out.join("teacher-run").exists());
}

#[test]
fn report_on_bundled_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("report.toml");
    std::fs::write(
        &config,
        r#"output_dir = "out"
[seeds]
split = 0
fewshot = 0
aux = 0
[report]
score_csv = "bundled"
systems = ["PaLM2 XXS-NTL (mufu20)", "Gemma 7B (mufu20)"]
benchmarks = ["PaLM2 S (teacher)", "NLLB 1.3B distilled"]
"#,
    )
    .unwrap();
    run(&config, Stage::Report, RunOptions::default()).unwrap();
    let summary = std::fs::read_to_string(tmp.path().join("out/report/summary.md")).unwrap();
    assert!(summary.contains("48.4"), "{summary}");
    let csv = std::fs::read_to_string(tmp.path().join("out/report/report.csv")).unwrap();
    assert!(csv.lines().count() > 4);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let (_tmp, config, _) = toy();
    let original = std::fs::read_to_string(&config).unwrap();
    for edited in [format!("bogus = 1\n{original}"), format!("{original}max_concurency = 2\n")] {
        std::fs::write(&config, edited).unwrap();
        let err = pipeline(&config).err().expect("config rejected");
        assert_eq!(exit_code(&err), 1);
        assert!(format!("{err:#}").contains("unknown field"), "{err:#}");
    }
}

fn write_kd_inputs(root: &Path, seeds: &[String], targets: &[&str], skip_every: usize) {
    std::fs::write(root.join("seed.txt"), seeds.join("\n") + "\n").unwrap();
    std::fs::write(root.join("excluded.txt"), format!("{}\n", seeds[0])).unwrap();
    let mut lines = String::new();
    let mut n = 0;
    for s in seeds {
        for t in targets {
            n += 1;
            if skip_every > 0 && n % skip_every == 0 {
                continue;
            }
            lines.push_str(&json!({"source": s, "target": t, "translation": format!("{t}: {s}")}).to_string());
            lines.push('\n');
        }
    }
    std::fs::write(root.join("kd_outputs.jsonl"), lines).unwrap();
}

const KD_SECTION: &str = r#"
[kd]
outputs = "kd_outputs.jsonl"
seed_sentences = "seed.txt"
excluded = "excluded.txt"
variant = "mufu20"
"#;

const TARGETS: [&str; 4] = ["ace_Latn", "ind_Latn", "jav_Latn", "zsm_Latn"];

#[test]
fn kd_export_builds_pool_and_records() {
    let (tmp, config, out) = toy();
    let seeds: Vec<String> = (0..6).map(|i| format!("Seed sentence {i}.")).collect();
    write_kd_inputs(tmp.path(), &seeds, &TARGETS, 0);
    append(&config, KD_SECTION);
    run(&config, Stage::Split, RunOptions::default()).unwrap();
    run(&config, Stage::KdExport, RunOptions::default()).unwrap();
    let dir = out.join("kd-export");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pool"], 5);
    assert_eq!(summary["dropped_seed"], 1);
    assert_eq!(summary["exported"], 5 * 4);
    let kd = std::fs::read_to_string(dir.join("kd.jsonl")).unwrap();
    assert_eq!(kd.lines().count(), 20);
    assert!(!kd.contains("Seed sentence 0."));
}

#[test]
fn kd_export_enforces_coverage_floor() {
    let (tmp, config, _) = toy();
    let seeds: Vec<String> = (0..6).map(|i| format!("Seed sentence {i}.")).collect();
    write_kd_inputs(tmp.path(), &seeds, &TARGETS, 4);
    append(&config, KD_SECTION);
    run(&config, Stage::Split, RunOptions::default()).unwrap();
    let err = run(&config, Stage::KdExport, RunOptions::default()).unwrap_err();
    assert_eq!(exit_code(&err), 1);
    assert!(err.to_string().contains("coverage"), "{err}");
}

#[test]
fn attn_report_writes_group_means_and_buckets() {
    let (tmp, config, out) = toy();
    let dump = json!({
        "context_tokens": ["Translate", "src", "aux", "draft"],
        "generated_tokens": ["out", "end"],
        "segments": {"instruction": [0, 1], "source": [1, 2], "auxiliary": [2, 3], "draft": [3, 4], "generated": [4, 6]},
        "weights": [[0.005, 0.05, 0.12, 0.825], [0.005, 0.05, 0.12, 0.2, 0.5]],
    });
    std::fs::write(tmp.path().join("dumps.jsonl"), format!("{dump}\n{dump}\n")).unwrap();
    append(&config, "\n[attention]\ndumps = [{ group = \"mufu20\", path = \"dumps.jsonl\" }]\n");
    run(&config, Stage::AttnReport, RunOptions::default()).unwrap();
    let dir = out.join("attn-report");
    let csv = std::fs::read_to_string(dir.join("attribution.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("mufu20,draft,")), "{csv}");
    let buckets = std::fs::read_to_string(dir.join("buckets.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(buckets.lines().next().unwrap()).unwrap();
    let labels: Vec<&str> = first["tokens"].as_array().unwrap().iter().map(|t| t[1].as_str().unwrap()).collect();
    assert_eq!(labels, ["white", "light_gray", "dark_gray", "black", "highlight"]);
}
