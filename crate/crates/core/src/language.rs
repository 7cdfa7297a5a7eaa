//! Language registry: codes, prompt display names, scripts and resource levels.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED_LANGUAGES: &str = include_str!("../data/languages.tsv");

/// Code of the source language used throughout the pipeline.
pub const ENGLISH: &str = "eng_Latn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceLevel {
    #[serde(rename = "VL")]
    VeryLow,
    #[serde(rename = "L")]
    Low,
    #[serde(rename = "M")]
    Medium,
    #[serde(rename = "H")]
    High,
}

impl ResourceLevel {
    pub const ALL: [ResourceLevel; 4] = [Self::VeryLow, Self::Low, Self::Medium, Self::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::VeryLow => "VL",
            Self::Low => "L",
            Self::Medium => "M",
            Self::High => "H",
        }
    }

    /// Very-low and low resource languages.
    pub fn is_low(self) -> bool {
        matches!(self, Self::VeryLow | Self::Low)
    }
}

impl fmt::Display for ResourceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "VL" => Ok(Self::VeryLow),
            "L" => Ok(Self::Low),
            "M" => Ok(Self::Medium),
            "H" => Ok(Self::High),
            other => Err(Error::Validation(format!("unknown resource level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub code: String,
    /// Name as it appears inside prompts, e.g. "Achinese in Arabic script".
    pub display_name: String,
    pub script: String,
    pub resource_level: Option<ResourceLevel>,
    pub in_distance_table: bool,
}

impl LanguageSpec {
    pub fn new(code: &str, display_name: &str) -> Self {
        Self {
            code: code.to_string(),
            display_name: display_name.to_string(),
            script: code.split_once('_').map(|(_, s)| s).unwrap_or("").to_string(),
            resource_level: None,
            in_distance_table: true,
        }
    }

    /// Language part of a `xxx_Scrp` code; script variants share it.
    pub fn base_code(&self) -> &str {
        base_code(&self.code)
    }
}

pub fn base_code(code: &str) -> &str {
    code.split_once('_').map(|(b, _)| b).unwrap_or(code)
}

/// Set of languages keyed by code. Codes are unique.
#[derive(Debug, Clone, Default)]
pub struct LanguageRegistry {
    by_code: BTreeMap<String, LanguageSpec>,
}

impl LanguageRegistry {
    pub fn from_specs(specs: impl IntoIterator<Item = LanguageSpec>) -> Result<Self> {
        let mut by_code = BTreeMap::new();
        for spec in specs {
            if spec.display_name.trim().is_empty() {
                return Err(Error::Validation(format!("{}: empty display name", spec.code)));
            }
            let code = spec.code.clone();
            if by_code.insert(code.clone(), spec).is_some() {
                return Err(Error::Validation(format!("duplicate language code {code}")));
            }
        }
        Ok(Self { by_code })
    }

    /// The registry shipped with the crate: English plus the 201 evaluated targets.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LANGUAGES, "languages.tsv").expect("bundled registry parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `code<TAB>display_name<TAB>script<TAB>resource_level[<TAB>in_distance_table]`.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut specs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if idx == 0 && fields[0] == "code" {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: line_no,
                message,
            };
            if fields.len() < 4 {
                return Err(err(format!("expected at least 4 fields, got {}", fields.len())));
            }
            let resource_level = match fields[3].trim() {
                "" | "-" => None,
                level => Some(level.parse().map_err(|e: Error| err(e.to_string()))?),
            };
            let in_distance_table = match fields.get(4).map(|s| s.trim()) {
                None | Some("") | Some("true") | Some("1") => true,
                Some("false") | Some("0") => false,
                Some(other) => return Err(err(format!("bad in_distance_table flag {other:?}"))),
            };
            specs.push(LanguageSpec {
                code: fields[0].trim().to_string(),
                display_name: fields[1].trim().to_string(),
                script: fields[2].trim().to_string(),
                resource_level,
                in_distance_table,
            });
        }
        Self::from_specs(specs).map_err(|e| match e {
            Error::Validation(message) => Error::Parse {
                source_name: source_name.to_string(),
                line: 0,
                message,
            },
            other => other,
        })
    }

    pub fn get(&self, code: &str) -> Result<&LanguageSpec> {
        self.by_code
            .get(code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn contains(&self, code: &str) -> bool {
        self.by_code.contains_key(code)
    }

    pub fn by_display_name(&self, name: &str) -> Option<&LanguageSpec> {
        self.by_code.values().find(|spec| spec.display_name == name)
    }

    /// Languages in ascending code order.
    pub fn iter(&self) -> impl Iterator<Item = &LanguageSpec> {
        self.by_code.values()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.by_code.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_code.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("code\tdisplay_name\tscript\tresource_level\tin_distance_table\n");
        for spec in self.iter() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                spec.code,
                spec.display_name,
                spec.script,
                spec.resource_level.map(|l| l.as_str()).unwrap_or(""),
                spec.in_distance_table
            ));
        }
        out
    }
}
