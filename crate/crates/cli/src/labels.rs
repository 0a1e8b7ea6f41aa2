//! Label files: one JSON object per line naming a case in the snapshot and
//! its gold labels.
//!
//! ```json
//! {"id":"Qiskit/qiskit#5217","flaky":true,"root_causes":["Randomness (PRNG)"],
//!  "fix_patterns":["Fix Seed"],"source":"original_dataset","reviewers":["a","b"]}
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use qflake_core::corpus::{CaseId, Snapshot};
use qflake_core::simsearch::{ExpansionState, TriageLabel};
use qflake_core::store::{LabeledCase, Provenance, ProvenanceSource};
use qflake_core::{FixPattern, RootCause};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRow {
    pub id: CaseId,
    pub flaky: bool,
    #[serde(default)]
    pub root_causes: Vec<RootCause>,
    #[serde(default)]
    pub fix_patterns: Vec<FixPattern>,
    pub source: ProvenanceSource,
    #[serde(default)]
    pub reviewers: Vec<String>,
    #[serde(default)]
    pub reviewed_at: Option<DateTime<Utc>>,
}

pub fn read_label_rows(path: &Path) -> Result<Vec<LabelRow>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Joins label rows with their snapshot artifacts. Review time defaults to
/// the snapshot time so the result is reproducible.
pub fn attach(rows: &[LabelRow], snapshot: &Snapshot) -> Result<Vec<LabeledCase>, CliError> {
    let mut seen = BTreeSet::new();
    rows.iter()
        .map(|row| {
            if !seen.insert(&row.id) {
                return Err(CliError::Validation(format!("{} is labeled twice", row.id)));
            }
            let case = snapshot
                .artifact(&row.id)
                .ok_or_else(|| CliError::Validation(format!("{} is not in the snapshot", row.id)))?;
            Ok(LabeledCase {
                case: case.clone(),
                flaky: row.flaky,
                root_causes: row.root_causes.clone(),
                fix_patterns: row.fix_patterns.clone(),
                provenance: Provenance {
                    source: row.source,
                    reviewer_ids: row.reviewers.clone(),
                    reviewed_at: row.reviewed_at.unwrap_or(snapshot.created_at),
                },
            })
        })
        .collect()
}

/// Flaky label rows for the seeds and every case confirmed during triage.
/// Seeds carry no root causes here; merge them with the original labels.
pub fn rows_from_state(state: &ExpansionState) -> Vec<LabelRow> {
    let mut rows: Vec<LabelRow> = state
        .seed_ids
        .iter()
        .map(|id| LabelRow {
            id: id.clone(),
            flaky: true,
            root_causes: Vec::new(),
            fix_patterns: Vec::new(),
            source: ProvenanceSource::OriginalDataset,
            reviewers: Vec::new(),
            reviewed_at: None,
        })
        .collect();
    for (id, record) in &state.labels {
        if let TriageLabel::ConfirmFlaky { root_causes } = &record.label {
            rows.push(LabelRow {
                id: id.clone(),
                flaky: true,
                root_causes: root_causes.clone(),
                fix_patterns: Vec::new(),
                source: ProvenanceSource::ExpansionIter(record.iteration),
                reviewers: record.reviewer.iter().cloned().collect(),
                reviewed_at: None,
            });
        }
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    rows
}
