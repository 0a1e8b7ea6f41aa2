use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::CaseId;
use crate::promptkit::{Conversation, ExperimentCondition, Stage};

use super::{parse_verdict, InferenceError, Outcome, Verdict};

/// Identity of one completion. At most one record per key may exist.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VerdictKey {
    pub case_id: CaseId,
    pub condition: ExperimentCondition,
    pub model_id: String,
    pub run_id: String,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    #[serde(flatten)]
    pub key: VerdictKey,
    pub conversation_hash: String,
    pub template_id: String,
    pub template_hash: String,
    pub verdict: Verdict,
}

impl VerdictRecord {
    pub fn new(key: VerdictKey, conversation: &Conversation, verdict: Verdict) -> Self {
        Self {
            key,
            conversation_hash: conversation.hash(),
            template_id: conversation.template_id.clone(),
            template_hash: conversation.template_hash.clone(),
            verdict,
        }
    }
}

struct Inner {
    records: BTreeMap<VerdictKey, VerdictRecord>,
    file: Option<File>,
}

/// Append-only line-delimited verdict log. Reopening a log restores every
/// record, so an interrupted run resumes without re-sampling.
pub struct VerdictStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl VerdictStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                records: BTreeMap::new(),
                file: None,
            }),
        }
    }

    pub fn open(path: &Path) -> Result<Self, InferenceError> {
        let io = |e: std::io::Error| InferenceError::Store(format!("{}: {e}", path.display()));
        let mut records = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: VerdictRecord = serde_json::from_str(&line)
                    .map_err(|e| InferenceError::Store(format!("{}:{}: {e}", path.display(), n + 1)))?;
                if records.insert(rec.key.clone(), rec).is_some() {
                    return Err(InferenceError::Store(format!(
                        "{}:{}: duplicate completion record",
                        path.display(),
                        n + 1
                    )));
                }
            }
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                records,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &VerdictKey) -> Option<VerdictRecord> {
        self.inner.lock().unwrap().records.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends and flushes one record; a second record for the same key is
    /// refused.
    pub fn append(&self, record: VerdictRecord) -> Result<(), InferenceError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.records.contains_key(&record.key) {
            return Err(InferenceError::DuplicateCompletion(format!(
                "{} {} {} {}",
                record.key.case_id,
                record.key.condition,
                record.key.model_id,
                record.key.stage.as_str()
            )));
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("record serializes");
            line.push(b'\n');
            file.write_all(&line)
                .and_then(|_| file.flush())
                .map_err(|e| InferenceError::Store(e.to_string()))?;
        }
        inner.records.insert(record.key.clone(), record);
        Ok(())
    }

    pub fn records(&self) -> Vec<VerdictRecord> {
        self.inner.lock().unwrap().records.values().cloned().collect()
    }

    /// Keys whose stored outcome differs from re-parsing the stored raw text.
    pub fn replay_mismatches(&self) -> Vec<VerdictKey> {
        self.inner
            .lock()
            .unwrap()
            .records
            .values()
            .filter(|r| parse_verdict(&r.verdict.raw_response, r.verdict.stage) != r.verdict.outcome)
            .map(|r| r.key.clone())
            .collect()
    }
}

/// Refuses a plan that would exceed the request cap.
pub fn check_budget(planned: usize, cap: Option<usize>) -> Result<(), InferenceError> {
    match cap {
        Some(cap) if planned > cap => Err(InferenceError::BudgetExceeded { planned, cap }),
        _ => Ok(()),
    }
}

pub fn is_consistent_outcome(stage: Stage, outcome: Outcome) -> bool {
    match outcome {
        Outcome::RootCause(_) => stage == Stage::Rq5,
        Outcome::Flaky | Outcome::NonFlaky => stage != Stage::Rq5,
        Outcome::Unusable => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ArtifactKind, CaseArtifact, RepositoryRef};
    use crate::promptkit::{build_conversation, CodeLevel, Enrichment, ReportLevel, TemplateSet};

    fn record(run: &str, raw: &str) -> VerdictRecord {
        let case = CaseArtifact::new(&RepositoryRef::new("p", "r"), ArtifactKind::Issue, 1, "t", "d");
        let cond = ExperimentCondition::new(ReportLevel::Partial, CodeLevel::None, Enrichment::None);
        let conv = build_conversation(&case, cond, None, None, &TemplateSet::default()).unwrap();
        let key = VerdictKey {
            case_id: case.id.clone(),
            condition: cond,
            model_id: "m".into(),
            run_id: run.into(),
            stage: Stage::Rq3,
        };
        let verdict = Verdict {
            stage: Stage::Rq3,
            outcome: parse_verdict(raw, Stage::Rq3),
            raw_response: raw.into(),
            latency_ms: 3,
            provider: "mock".into(),
        };
        VerdictRecord::new(key, &conv, verdict)
    }

    #[test]
    fn append_reopen_and_refuse_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.jsonl");
        {
            let store = VerdictStore::open(&path).unwrap();
            store.append(record("r1", "FLAKY")).unwrap();
            store.append(record("r2", "")).unwrap();
            assert!(matches!(
                store.append(record("r1", "NON-FLAKY")),
                Err(InferenceError::DuplicateCompletion(_))
            ));
        }
        let store = VerdictStore::open(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(
            store.get(&record("r1", "").key).unwrap().verdict.outcome,
            Outcome::Flaky
        );
        assert!(store.replay_mismatches().is_empty());
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn budget_guard() {
        assert!(check_budget(10, Some(10)).is_ok());
        assert!(check_budget(11, Some(10)).is_err());
        assert!(check_budget(11, None).is_ok());
    }
}
