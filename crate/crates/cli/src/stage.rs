use std::fmt;
use std::str::FromStr;

use anyhow::bail;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Plan,
    Split,
    TeacherRun,
    BuildPrompts,
    StudentRun,
    ExportFinetune,
    Evaluate,
    Report,
    KdExport,
    AttnReport,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Self::Plan,
        Self::Split,
        Self::TeacherRun,
        Self::BuildPrompts,
        Self::StudentRun,
        Self::ExportFinetune,
        Self::Evaluate,
        Self::Report,
        Self::KdExport,
        Self::AttnReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Plan => "plan",
            Self::Split => "split",
            Self::TeacherRun => "teacher-run",
            Self::BuildPrompts => "build-prompts",
            Self::StudentRun => "student-run",
            Self::ExportFinetune => "export-finetune",
            Self::Evaluate => "evaluate",
            Self::Report => "report",
            Self::KdExport => "kd-export",
            Self::AttnReport => "attn-report",
        }
    }

    /// Stages whose manifests must be present and fresh. `report` reading an
    /// external score table has no upstream.
    pub fn upstream(self, external_scores: bool) -> &'static [Stage] {
        match self {
            Self::Plan | Self::Split | Self::AttnReport => &[],
            Self::TeacherRun => &[Self::Plan, Self::Split],
            Self::BuildPrompts => &[Self::Plan, Self::Split, Self::TeacherRun],
            Self::StudentRun | Self::ExportFinetune => &[Self::BuildPrompts],
            Self::Evaluate => &[Self::TeacherRun, Self::StudentRun],
            Self::Report if external_scores => &[],
            Self::Report => &[Self::Evaluate],
            Self::KdExport => &[Self::Split],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match Self::ALL.into_iter().find(|st| st.name() == s) {
            Some(stage) => Ok(stage),
            None => bail!(
                "unknown stage {s:?}; expected one of {}",
                Self::ALL.map(Stage::name).join(", ")
            ),
        }
    }
}
