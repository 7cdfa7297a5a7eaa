//! Toy 20-sentence, 5-language workspace shared by the pipeline unit tests
//! and the acceptance suite.

use std::path::{Path, PathBuf};

pub const LANGS: [&str; 5] = ["eng_Latn", "ace_Latn", "ind_Latn", "jav_Latn", "zsm_Latn"];
pub const N_SENTENCES: usize = 20;

const WORDS: [&str; 10] = ["river", "market", "school", "harbour", "garden", "bridge", "library", "mountain", "station", "village"];

fn sentence(lang: &str, i: usize) -> String {
    let word = WORDS[i % WORDS.len()];
    match lang {
        "eng_Latn" => format!("The {word} number {i} opened in {}.", 1990 + i),
        "ace_Latn" => format!("{word} nomor {i} geupeuhah bak thôn {}.", 1990 + i),
        "ind_Latn" => format!("{word} nomor {i} dibuka pada tahun {}.", 1990 + i),
        "jav_Latn" => format!("{word} nomer {i} dibukak ing taun {}.", 1990 + i),
        "zsm_Latn" => format!("{word} nombor {i} dibuka pada tahun {}.", 1990 + i),
        _ => unreachable!(),
    }
}

/// Writes a 20-sentence corpus, a distance table and a run config under
/// `root`, returning the config path.
pub fn toy_workspace(root: &Path) -> PathBuf {
    let corpus = root.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    for lang in LANGS {
        let text: String = (0..N_SENTENCES).map(|i| sentence(lang, i) + "\n").collect();
        std::fs::write(corpus.join(format!("{lang}.txt")), text).unwrap();
    }
    let mut distances = String::from("target\tcandidate\tgenetic\tgeographic\n");
    let targets = &LANGS[1..];
    for (a, t) in targets.iter().enumerate() {
        for (b, c) in targets.iter().enumerate() {
            if a != b {
                let d = (a as f64 - b as f64).abs() / 10.0;
                distances.push_str(&format!("{t}\t{c}\t{d}\t{}\n", d / 2.0));
            }
        }
    }
    std::fs::write(root.join("distances.tsv"), distances).unwrap();
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        r#"output_dir = "out"
targets = ["ace_Latn", "ind_Latn", "jav_Latn", "zsm_Latn"]

[seeds]
split = 7
fewshot = 11
aux = 13

[data]
corpus_dir = "corpus"
distances = "distances.tsv"

[splits]
train = 8
validation = 8
prompt_selection = 2
fewshot_reserve = 2

[plan]
source = "distances"

[variant]
name = "mufu2"
n_shots = 2
eval_split = "validation"
train_split = "train"

[teacher]
kind = "corpus_lookup"
name = "mock-teacher"

[student]
kind = "corpus_lookup"
name = "mock-student"
"#,
    )
    .unwrap();
    config
}

pub fn endpoint_calls(out_dir: &Path, stage: &str) -> u64 {
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join(stage).join("stats.json")).unwrap()).unwrap();
    stats["endpoint_calls"].as_u64().unwrap()
}

/// Every file under `dir` except cache ledgers and call statistics, with contents.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            let rel = path.strip_prefix(dir).unwrap().to_path_buf();
            if path.is_dir() {
                if rel != Path::new("cache") {
                    stack.push(path);
                }
            } else if path.file_name().unwrap() != "stats.json" {
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}
