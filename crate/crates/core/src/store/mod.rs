//! The labeled dataset on disk: `<root>/{full|method}/{flaky|non-flaky}/<case>/`.

mod export;
mod persist;
mod validate;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codectx::{CodeContext, ContextLevel};
use crate::corpus::{CaseArtifact, CaseId};
use crate::taxonomy::{FixPattern, RootCause};

pub use export::{export_flat, ExportSummary};
pub use persist::{case_dir, load_dataset, persist_case, persist_dataset, LABEL_SCHEMA_VERSION};
pub use validate::{
    summarize, validate_dataset, validate_layout, DatasetSummary, ValidationOptions, Violation, ViolationKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProvenanceSource {
    OriginalDataset,
    /// Confirmed in the given expansion iteration (1-based).
    ExpansionIter(u32),
    NegativeSampling,
    HardNegative,
}

impl fmt::Display for ProvenanceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProvenanceSource::OriginalDataset => f.write_str("original_dataset"),
            ProvenanceSource::ExpansionIter(n) => write!(f, "expansion_iter_{n}"),
            ProvenanceSource::NegativeSampling => f.write_str("negative_sampling"),
            ProvenanceSource::HardNegative => f.write_str("hard_negative"),
        }
    }
}

impl FromStr for ProvenanceSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original_dataset" => Ok(Self::OriginalDataset),
            "negative_sampling" => Ok(Self::NegativeSampling),
            "hard_negative" => Ok(Self::HardNegative),
            other => other
                .strip_prefix("expansion_iter_")
                .and_then(|n| n.parse().ok())
                .map(Self::ExpansionIter)
                .ok_or_else(|| format!("unknown provenance source `{other}`")),
        }
    }
}

impl Serialize for ProvenanceSource {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProvenanceSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: ProvenanceSource,
    pub reviewer_ids: Vec<String>,
    pub reviewed_at: DateTime<Utc>,
}

/// A case with its gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub case: CaseArtifact,
    pub flaky: bool,
    /// Empty iff not flaky.
    pub root_causes: Vec<RootCause>,
    /// Paired with `root_causes` by position; may be shorter.
    #[serde(default)]
    pub fix_patterns: Vec<FixPattern>,
    pub provenance: Provenance,
}

impl LabeledCase {
    pub fn id(&self) -> &CaseId {
        &self.case.id
    }

    /// (cause, fix) pairs; a cause without a recorded fix counts as `Others`.
    pub fn cause_fix_pairs(&self) -> impl Iterator<Item = (RootCause, FixPattern)> + '_ {
        self.root_causes
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, self.fix_patterns.get(i).copied().unwrap_or(FixPattern::Others)))
    }
}

/// A labeled case with its code context at both levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCase {
    pub labeled: LabeledCase,
    pub partial: CodeContext,
    pub full: CodeContext,
}

impl DatasetCase {
    pub fn context(&self, level: ContextLevel) -> &CodeContext {
        match level {
            ContextLevel::Partial => &self.partial,
            ContextLevel::Full => &self.full,
        }
    }

    pub fn id(&self) -> &CaseId {
        self.labeled.id()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("refusing to persist invalid case {case}: {reason}")]
    Validation { case: CaseId, reason: String },
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        StoreError::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
