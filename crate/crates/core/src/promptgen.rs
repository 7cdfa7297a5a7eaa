//! Prompt rendering for every translation / post-editing variant and parsing
//! of model completions.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::language::{LanguageSpec, ENGLISH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptKind {
    Baseline,
    Postedit,
    Mufu { k: usize },
    MufuTranslate { k: usize },
    TeacherFewshot { n_shots: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStyle {
    #[default]
    AutomaticCorrected,
    CandidateReference,
}

impl LabelStyle {
    fn draft(self) -> &'static str {
        match self {
            Self::AutomaticCorrected => "Automatic",
            Self::CandidateReference => "Candidate",
        }
    }

    fn answer(self) -> &'static str {
        match self {
            Self::AutomaticCorrected => "Corrected",
            Self::CandidateReference => "Reference",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionStyle {
    #[default]
    ListLanguages,
    AsSpecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptVariant {
    pub kind: PromptKind,
    #[serde(default)]
    pub label_style: LabelStyle,
    #[serde(default)]
    pub instruction_style: InstructionStyle,
}

impl PromptVariant {
    pub fn new(kind: PromptKind) -> Result<Self> {
        match kind {
            PromptKind::Mufu { k: 0 } | PromptKind::MufuTranslate { k: 0 } => {
                Err(Error::Validation("mufu variants need k >= 1".into()))
            }
            PromptKind::TeacherFewshot { n_shots: 0 } => {
                Err(Error::Validation("few-shot prompts need at least one shot".into()))
            }
            _ => Ok(Self {
                kind,
                label_style: LabelStyle::default(),
                instruction_style: InstructionStyle::default(),
            }),
        }
    }

    pub fn baseline() -> Self {
        Self::new(PromptKind::Baseline).unwrap()
    }

    pub fn postedit() -> Self {
        Self::new(PromptKind::Postedit).unwrap()
    }

    pub fn mufu(k: usize) -> Result<Self> {
        Self::new(PromptKind::Mufu { k })
    }

    pub fn mufu_translate(k: usize) -> Result<Self> {
        Self::new(PromptKind::MufuTranslate { k })
    }

    pub fn with_labels(mut self, style: LabelStyle) -> Self {
        self.label_style = style;
        self
    }

    pub fn with_instruction(mut self, style: InstructionStyle) -> Self {
        self.instruction_style = style;
        self
    }

    /// Number of auxiliary candidates the variant consumes.
    pub fn n_auxiliaries(&self) -> usize {
        match self.kind {
            PromptKind::Mufu { k } | PromptKind::MufuTranslate { k } => k,
            _ => 0,
        }
    }

    /// Whether the prompt carries a target-language draft.
    pub fn needs_draft(&self) -> bool {
        matches!(self.kind, PromptKind::Postedit | PromptKind::Mufu { .. })
    }
}

/// Short names: `baseline`, `postedit` (alias `mufu0`), `mufu5`, `mufu5tr`,
/// `fewshot5`, with optional `+cr` (candidate/reference labels) and `+spec`
/// (as-specified instruction) suffixes.
impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PromptKind::Baseline => write!(f, "baseline")?,
            PromptKind::Postedit => write!(f, "postedit")?,
            PromptKind::Mufu { k } => write!(f, "mufu{k}")?,
            PromptKind::MufuTranslate { k } => write!(f, "mufu{k}tr")?,
            PromptKind::TeacherFewshot { n_shots } => write!(f, "fewshot{n_shots}")?,
        }
        if self.label_style == LabelStyle::CandidateReference {
            write!(f, "+cr")?;
        }
        if self.instruction_style == InstructionStyle::AsSpecified {
            write!(f, "+spec")?;
        }
        Ok(())
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split('+');
        let head = parts.next().unwrap_or("");
        let bad = || Error::Validation(format!("unknown prompt variant {s:?}"));
        let count = |digits: &str| digits.parse::<usize>().map_err(|_| bad());
        let kind = if head == "baseline" {
            PromptKind::Baseline
        } else if head == "postedit" || head == "mufu0" {
            PromptKind::Postedit
        } else if let Some(rest) = head.strip_prefix("mufu") {
            match rest.strip_suffix("tr") {
                Some(k) => PromptKind::MufuTranslate { k: count(k)? },
                None => PromptKind::Mufu { k: count(rest)? },
            }
        } else if let Some(n) = head.strip_prefix("fewshot") {
            PromptKind::TeacherFewshot { n_shots: count(n)? }
        } else {
            return Err(bad());
        };
        let mut variant = Self::new(kind)?;
        for suffix in parts {
            match suffix {
                "cr" => variant.label_style = LabelStyle::CandidateReference,
                "spec" => variant.instruction_style = InstructionStyle::AsSpecified,
                _ => return Err(bad()),
            }
        }
        Ok(variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub variant: PromptVariant,
    pub source_text: String,
    pub source_language_name: String,
    pub target: LanguageSpec,
    /// Auxiliary translations, farthest language first.
    pub candidates: Vec<(LanguageSpec, String)>,
    pub postedit_candidate: Option<String>,
    pub fewshot_examples: Option<Vec<(String, String)>>,
}

impl PromptInstance {
    pub fn new(variant: PromptVariant, source_text: &str, target: LanguageSpec) -> Self {
        Self {
            variant,
            source_text: source_text.to_string(),
            source_language_name: "English".to_string(),
            target,
            candidates: Vec::new(),
            postedit_candidate: None,
            fewshot_examples: None,
        }
    }

    pub fn with_candidates(mut self, candidates: Vec<(LanguageSpec, String)>) -> Self {
        self.candidates = candidates;
        self
    }

    pub fn with_draft(mut self, draft: &str) -> Self {
        self.postedit_candidate = Some(draft.to_string());
        self
    }

    pub fn with_fewshot(mut self, examples: Vec<(String, String)>) -> Self {
        self.fewshot_examples = Some(examples);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::Validation(msg));
        let k = self.candidates.len();
        let has_draft = self.postedit_candidate.is_some();
        match self.variant.kind {
            PromptKind::Mufu { k: want } if k != want || !has_draft => {
                return invalid(format!("mufu{want} needs {want} candidates and a draft, got {k} candidates"));
            }
            PromptKind::Postedit if k != 0 || !has_draft => {
                return invalid("postedit needs a draft and no candidates".into());
            }
            PromptKind::MufuTranslate { k: want } if k != want || has_draft => {
                return invalid(format!("mufu{want}tr needs {want} candidates and no draft, got {k}"));
            }
            PromptKind::Baseline | PromptKind::TeacherFewshot { .. } if k != 0 || has_draft => {
                return invalid(format!("{} takes no candidates or draft", self.variant));
            }
            PromptKind::TeacherFewshot { n_shots } => {
                let have = self.fewshot_examples.as_ref().map_or(0, Vec::len);
                if have != n_shots {
                    return invalid(format!("fewshot{n_shots} needs {n_shots} examples, got {have}"));
                }
            }
            _ => {}
        }
        let names = std::iter::once(&self.target.display_name)
            .chain(std::iter::once(&self.source_language_name))
            .chain(self.candidates.iter().map(|(l, _)| &l.display_name));
        for name in names {
            if name.trim().is_empty() {
                return invalid("empty language display name".into());
            }
        }
        let texts = std::iter::once(&self.source_text)
            .chain(self.candidates.iter().map(|(_, t)| t))
            .chain(self.postedit_candidate.iter());
        for text in texts {
            if text.contains('\n') {
                return invalid(format!("prompt field contains a newline: {text:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub completion_prefix: String,
    pub digest: String,
}

impl RenderedPrompt {
    fn from_lines(lines: Vec<String>) -> Self {
        let completion_prefix = lines.last().cloned().unwrap_or_default();
        let text = lines.join("\n");
        let digest = sha256_hex(text.as_bytes());
        Self {
            text,
            completion_prefix,
            digest,
        }
    }
}

/// "a", "a and b", "a, b and c".
fn join_names(names: &[&str]) -> String {
    match names {
        [] => String::new(),
        [only] => only.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

pub fn render(instance: &PromptInstance) -> Result<RenderedPrompt> {
    instance.validate()?;
    let variant = instance.variant;
    let src_name = &instance.source_language_name;
    let target = &instance.target.display_name;
    let source_line = format!("{src_name}: {}", instance.source_text);

    if let PromptKind::TeacherFewshot { .. } = variant.kind {
        let examples = instance.fewshot_examples.as_deref().unwrap_or_default();
        return fewshot_lines(src_name, target, examples, &instance.source_text);
    }
    if variant.kind == PromptKind::Baseline {
        return Ok(RenderedPrompt::from_lines(vec![
            format!("Translate from {src_name} to {target}."),
            source_line,
            format!("{target}:"),
        ]));
    }

    let translate_only = matches!(variant.kind, PromptKind::MufuTranslate { .. });
    let mut listed: Vec<&str> = instance.candidates.iter().map(|(l, _)| l.display_name.as_str()).collect();
    if !translate_only {
        listed.push(target);
    }
    let languages = match variant.instruction_style {
        InstructionStyle::ListLanguages => join_names(&listed),
        InstructionStyle::AsSpecified => "several languages as specified".to_string(),
    };
    let task = if translate_only {
        format!("Translate from {src_name} to {target}.")
    } else {
        format!("Correct the translation from {src_name} to {target}.")
    };
    let draft_label = variant.label_style.draft();

    let mut lines = vec![
        format!("The {src_name} sentence has been translated into {languages}. These translations may contain errors. {task}"),
        source_line,
    ];
    for (lang, text) in &instance.candidates {
        lines.push(format!("{draft_label} {}: {text}", lang.display_name));
    }
    if let Some(draft) = &instance.postedit_candidate {
        lines.push(format!("{draft_label} {target}: {draft}"));
        lines.push(format!("{} {target}:", variant.label_style.answer()));
    } else {
        lines.push(format!("{target}:"));
    }
    Ok(RenderedPrompt::from_lines(lines))
}

fn fewshot_lines(src_name: &str, target: &str, examples: &[(String, String)], source: &str) -> Result<RenderedPrompt> {
    if examples.is_empty() {
        return Err(Error::Validation("few-shot prompt needs at least one example".into()));
    }
    let mut lines = vec![format!("Translate from {src_name} to {target}.")];
    for (src, reference) in examples {
        if src.contains('\n') || reference.contains('\n') {
            return Err(Error::Validation("few-shot example contains a newline".into()));
        }
        lines.push(String::new());
        lines.push(format!("{src_name}: {src}"));
        lines.push(format!("{target}: {reference}"));
    }
    lines.push(String::new());
    lines.push(format!("{src_name}: {source}"));
    lines.push(format!("{target}:"));
    Ok(RenderedPrompt::from_lines(lines))
}

/// Teacher prompt: instruction, then blank-line separated exemplar blocks, then the query.
pub fn render_teacher_fewshot(
    target: &LanguageSpec,
    fewshot: &[(String, String)],
    source_text: &str,
) -> Result<RenderedPrompt> {
    if target.display_name.trim().is_empty() {
        return Err(Error::Validation("empty target display name".into()));
    }
    if source_text.contains('\n') {
        return Err(Error::Validation("source text contains a newline".into()));
    }
    fewshot_lines("English", &target.display_name, fewshot, source_text)
}

/// Strips an echoed prefix, keeps the first line and trims it.
pub fn parse_completion(raw: &str, completion_prefix: &str) -> String {
    let mut text = raw.trim_start();
    if !completion_prefix.is_empty() {
        if let Some(rest) = text.strip_prefix(completion_prefix.trim()) {
            text = rest;
        }
    }
    let text = text.trim_start_matches([' ', '\t']);
    text.split('\n').next().unwrap_or("").trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub target: String,
    pub pair: String,
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

pub fn pair_name(target_code: &str) -> String {
    format!("{ENGLISH}-{target_code}")
}

/// One record per instance; the target is the reference prefixed with a space.
pub fn build_finetune_records<'a, I>(items: I) -> Result<Vec<FinetuneRecord>>
where
    I: IntoIterator<Item = (&'a PromptInstance, Option<&'a str>)>,
{
    items
        .into_iter()
        .map(|(instance, reference)| {
            let reference = reference.ok_or_else(|| {
                Error::Validation(format!(
                    "missing reference for {} sentence {:?}",
                    instance.target.code, instance.source_text
                ))
            })?;
            let rendered = render(instance)?;
            Ok(FinetuneRecord {
                prompt: rendered.text,
                target: format!(" {reference}"),
                pair: pair_name(&instance.target.code),
                variant: instance.variant.to_string(),
                origin: None,
            })
        })
        .collect()
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[FinetuneRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ace() -> LanguageSpec {
        LanguageSpec::new("ace_Latn", "Achinese")
    }

    #[test]
    fn name_lists() {
        assert_eq!(join_names(&["A"]), "A");
        assert_eq!(join_names(&["A", "B"]), "A and B");
        assert_eq!(join_names(&["A", "B", "C"]), "A, B and C");
    }

    #[test]
    fn variant_names_round_trip() {
        for name in ["baseline", "postedit", "mufu5", "mufu20tr", "fewshot5", "mufu5+cr+spec"] {
            assert_eq!(name.parse::<PromptVariant>().unwrap().to_string(), name);
        }
        assert_eq!("mufu0".parse::<PromptVariant>().unwrap(), PromptVariant::postedit());
        assert!("mufu0tr".parse::<PromptVariant>().is_err());
        assert!("mufux".parse::<PromptVariant>().is_err());
    }

    #[test]
    fn baseline_prompt() {
        let p = render(&PromptInstance::new(PromptVariant::baseline(), "Hi.", ace())).unwrap();
        assert_eq!(p.text, "Translate from English to Achinese.\nEnglish: Hi.\nAchinese:");
        assert_eq!(p.completion_prefix, "Achinese:");
    }

    #[test]
    fn mufu_translate_prompt() {
        let inst = PromptInstance::new(PromptVariant::mufu_translate(2).unwrap(), "Hi.", ace()).with_candidates(vec![
            (LanguageSpec::new("zsm_Latn", "Malay"), "Hai.".into()),
            (LanguageSpec::new("ind_Latn", "Indonesian"), "Halo.".into()),
        ]);
        let p = render(&inst).unwrap();
        assert_eq!(
            p.text,
            "The English sentence has been translated into Malay and Indonesian. These translations may \
             contain errors. Translate from English to Achinese.\nEnglish: Hi.\nAutomatic Malay: Hai.\n\
             Automatic Indonesian: Halo.\nAchinese:"
        );
    }

    #[test]
    fn styles_swap_labels_and_instruction() {
        let inst = PromptInstance::new(
            PromptVariant::postedit()
                .with_labels(LabelStyle::CandidateReference)
                .with_instruction(InstructionStyle::AsSpecified),
            "Hi.",
            ace(),
        )
        .with_draft("Hai.");
        let p = render(&inst).unwrap();
        assert_eq!(
            p.text,
            "The English sentence has been translated into several languages as specified. These translations \
             may contain errors. Correct the translation from English to Achinese.\nEnglish: Hi.\n\
             Candidate Achinese: Hai.\nReference Achinese:"
        );
    }

    #[test]
    fn invariant_violations() {
        let base = PromptInstance::new(PromptVariant::mufu(1).unwrap(), "Hi.", ace());
        assert!(render(&base).is_err());
        assert!(render(&PromptInstance::new(PromptVariant::postedit(), "Hi.", ace())).is_err());
        assert!(render(&PromptInstance::new(PromptVariant::baseline(), "Hi.", ace()).with_draft("x")).is_err());
        assert!(render(&PromptInstance::new(PromptVariant::baseline(), "a\nb", ace())).is_err());
        assert!(PromptVariant::mufu(0).is_err());
        let nameless = LanguageSpec::new("ace_Latn", "");
        assert!(render(&PromptInstance::new(PromptVariant::baseline(), "Hi.", nameless)).is_err());
    }

    #[test]
    fn completions() {
        assert_eq!(
            parse_completion("Corrected Achinese: Amandemen nyang", "Corrected Achinese:"),
            "Amandemen nyang"
        );
        assert_eq!(parse_completion(" hello\nEnglish: next", "Achinese:"), "hello");
        assert_eq!(parse_completion("", "Achinese:"), "");
    }

    #[test]
    fn finetune_records() {
        let inst = PromptInstance::new(PromptVariant::baseline(), "Hi.", ace());
        let records = build_finetune_records([(&inst, Some("Hai."))]).unwrap();
        assert_eq!(records[0].target, " Hai.");
        assert_eq!(records[0].pair, "eng_Latn-ace_Latn");
        assert_eq!(records[0].variant, "baseline");
        assert!(build_finetune_records([(&inst, None)]).is_err());
        assert!(build_finetune_records(std::iter::empty()).unwrap().is_empty());
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert!(line.ends_with('\n') && !line.contains("origin"));
    }
}
