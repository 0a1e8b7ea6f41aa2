use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codectx::ContextLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReportLevel {
    #[serde(rename = "R_p")]
    Partial,
    #[serde(rename = "R_f")]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CodeLevel {
    #[serde(rename = "C_none")]
    None,
    #[serde(rename = "C_p")]
    Partial,
    #[serde(rename = "C_f")]
    Full,
}

impl CodeLevel {
    pub fn context_level(self) -> Option<ContextLevel> {
        match self {
            CodeLevel::None => None,
            CodeLevel::Partial => Some(ContextLevel::Partial),
            CodeLevel::Full => Some(ContextLevel::Full),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Enrichment {
    #[serde(rename = "E_none")]
    None,
    #[serde(rename = "E_p")]
    Partial,
    #[serde(rename = "E_f")]
    Full,
}

impl Enrichment {
    /// Report scope the example is selected and rendered under.
    pub fn report_level(self) -> Option<ReportLevel> {
        match self {
            Enrichment::None => None,
            Enrichment::Partial => Some(ReportLevel::Partial),
            Enrichment::Full => Some(ReportLevel::Full),
        }
    }
}

macro_rules! short_names {
    ($ty:ty { $($variant:ident => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn short(self) -> &'static str {
                match self { $(<$ty>::$variant => $s),+ }
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($s => Ok(<$ty>::$variant),)+
                    other => Err(format!("unknown level `{other}`")),
                }
            }
        }
    };
}

short_names!(ReportLevel { Partial => "R_p", Full => "R_f" });
short_names!(CodeLevel { None => "C_none", Partial => "C_p", Full => "C_f" });
short_names!(Enrichment { None => "E_none", Partial => "E_p", Full => "E_f" });

/// One cell of the report x code x enrichment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExperimentCondition {
    pub report_level: ReportLevel,
    pub code_level: CodeLevel,
    pub enrichment: Enrichment,
}

impl ExperimentCondition {
    pub const fn new(report_level: ReportLevel, code_level: CodeLevel, enrichment: Enrichment) -> Self {
        Self {
            report_level,
            code_level,
            enrichment,
        }
    }

    /// Stable machine key, e.g. `R_p/C_f/E_none`.
    pub fn key(&self) -> String {
        format!(
            "{}/{}/{}",
            self.report_level.short(),
            self.code_level.short(),
            self.enrichment.short()
        )
    }

    /// Table label, e.g. `{R_p, C_f}` or `E_p{R_f, C_p}`.
    pub fn table_label(&self) -> String {
        let prefix = match self.enrichment {
            Enrichment::None => "",
            e => e.short(),
        };
        match self.code_level {
            CodeLevel::None => format!("{prefix}{{{}}}", self.report_level.short()),
            c => format!("{prefix}{{{}, {}}}", self.report_level.short(), c.short()),
        }
    }

    /// The same cell without code: the RQ3 view of this condition.
    pub fn report_only(&self) -> Self {
        Self::new(self.report_level, CodeLevel::None, self.enrichment)
    }
}

impl fmt::Display for ExperimentCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for ExperimentCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        let [r, c, e] = parts[..] else {
            return Err(format!("condition `{s}` is not R/C/E"));
        };
        Ok(Self::new(r.parse()?, c.parse()?, e.parse()?))
    }
}

const REPORTS: [ReportLevel; 2] = [ReportLevel::Partial, ReportLevel::Full];
const CODES: [CodeLevel; 2] = [CodeLevel::Partial, CodeLevel::Full];
const ENRICHMENTS: [Enrichment; 3] = [Enrichment::None, Enrichment::Partial, Enrichment::Full];

/// Code-bearing conditions in table order: enrichment block, then report
/// level, then code level. 4 without enrichment, 12 with.
pub fn enumerate_conditions(include_enrichment: bool) -> Vec<ExperimentCondition> {
    let enrichments: &[Enrichment] = if include_enrichment {
        &ENRICHMENTS
    } else {
        &ENRICHMENTS[..1]
    };
    let mut out = Vec::new();
    for &e in enrichments {
        for r in REPORTS {
            for c in CODES {
                out.push(ExperimentCondition::new(r, c, e));
            }
        }
    }
    out
}

/// Every representable cell (2 x 3 x 3).
pub fn all_conditions() -> Vec<ExperimentCondition> {
    let mut out = Vec::new();
    for e in ENRICHMENTS {
        for r in REPORTS {
            for c in [CodeLevel::None, CodeLevel::Partial, CodeLevel::Full] {
                out.push(ExperimentCondition::new(r, c, e));
            }
        }
    }
    out
}
