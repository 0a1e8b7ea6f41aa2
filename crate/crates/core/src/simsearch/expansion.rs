use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CaseId;
use crate::taxonomy::RootCause;

use super::{rank_candidates, Aggregation, EmbeddingIndex, RankedCandidate, SimError, DEFAULT_QUEUE_SIZE};

pub const EXPANSION_SCHEMA_VERSION: &str = "1";

/// A reviewer's decision on one queued candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum TriageLabel {
    ConfirmFlaky {
        #[serde(default)]
        root_causes: Vec<RootCause>,
    },
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub label: TriageLabel,
    /// Iteration whose queue the label was given in (1-based).
    pub iteration: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
}

/// Progress of the rank / review / augment loop. Labels are first staged
/// against the current queue and applied together by [`ExpansionState::advance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionState {
    pub schema_version: String,
    pub iteration: u32,
    pub k: usize,
    pub aggregation: Aggregation,
    pub seed_ids: BTreeSet<CaseId>,
    /// Entry `i` holds the cases confirmed in iteration `i + 1`.
    pub confirmed_new_ids: Vec<Vec<CaseId>>,
    pub rejected_ids: BTreeSet<CaseId>,
    pub labels: BTreeMap<CaseId, LabelRecord>,
    pub staged: BTreeMap<CaseId, LabelRecord>,
    pub pending_queue: Vec<RankedCandidate>,
}

impl ExpansionState {
    pub fn new(seeds: BTreeSet<CaseId>, k: usize, aggregation: Aggregation) -> Self {
        Self {
            schema_version: EXPANSION_SCHEMA_VERSION.to_string(),
            iteration: 0,
            k,
            aggregation,
            seed_ids: seeds,
            confirmed_new_ids: Vec::new(),
            rejected_ids: BTreeSet::new(),
            labels: BTreeMap::new(),
            staged: BTreeMap::new(),
            pending_queue: Vec::new(),
        }
    }

    pub fn with_default_queue(seeds: BTreeSet<CaseId>) -> Self {
        Self::new(seeds, DEFAULT_QUEUE_SIZE, Aggregation::Max)
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &CaseId> {
        self.confirmed_new_ids.iter().flatten()
    }

    /// Seeds plus every confirmed case: the similarity anchors.
    pub fn anchors(&self) -> BTreeSet<CaseId> {
        self.seed_ids.iter().chain(self.confirmed()).cloned().collect()
    }

    pub fn is_decided(&self, id: &CaseId) -> bool {
        self.seed_ids.contains(id) || self.labels.contains_key(id) || self.staged.contains_key(id)
    }

    /// Queue entries not yet labeled in this round.
    pub fn open_queue(&self) -> impl Iterator<Item = &RankedCandidate> {
        self.pending_queue
            .iter()
            .filter(|c| !self.staged.contains_key(&c.case_id))
    }

    /// Ranks the corpus against the current anchors.
    pub fn refresh(&mut self, corpus: &BTreeSet<CaseId>, index: &EmbeddingIndex) -> Result<(), SimError> {
        let anchors = self.anchors();
        self.pending_queue = rank_candidates(corpus, &anchors, &self.rejected_ids, index, self.k, self.aggregation)?;
        Ok(())
    }

    pub fn stage(&mut self, id: &CaseId, label: TriageLabel, reviewer: Option<String>) -> Result<(), SimError> {
        if self.is_decided(id) {
            return Err(SimError::AlreadyLabeled(id.clone()));
        }
        if !self.pending_queue.iter().any(|c| &c.case_id == id) {
            return Err(SimError::UnknownCandidate(id.clone()));
        }
        self.staged.insert(
            id.clone(),
            LabelRecord {
                label,
                iteration: self.iteration + 1,
                reviewer,
            },
        );
        Ok(())
    }

    /// Applies staged labels, closes the iteration and re-ranks.
    pub fn advance(&mut self, corpus: &BTreeSet<CaseId>, index: &EmbeddingIndex) -> Result<(), SimError> {
        let staged = std::mem::take(&mut self.staged);
        let mut confirmed = Vec::new();
        for (id, record) in staged {
            match record.label {
                TriageLabel::ConfirmFlaky { .. } => confirmed.push(id.clone()),
                TriageLabel::Reject => {
                    self.rejected_ids.insert(id.clone());
                }
            }
            self.labels.insert(id, record);
        }
        self.confirmed_new_ids.push(confirmed);
        self.iteration += 1;
        self.refresh(corpus, index)
    }

    /// No more confirmations possible: the queue is empty, or the last
    /// closed iteration confirmed nothing.
    pub fn is_fixed_point(&self) -> bool {
        self.pending_queue.is_empty() || self.confirmed_new_ids.last().is_some_and(|c| c.is_empty())
    }

    pub fn total_flaky(&self) -> usize {
        self.seed_ids.len() + self.confirmed().count()
    }

    /// Growth over the original seed set in percent.
    pub fn growth_percent(&self) -> f64 {
        if self.seed_ids.is_empty() {
            return 0.0;
        }
        self.confirmed().count() as f64 / self.seed_ids.len() as f64 * 100.0
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let confirmed: BTreeSet<&CaseId> = self.confirmed().collect();
        if confirmed.len() != self.confirmed().count() {
            return Err("a case was confirmed twice".into());
        }
        for id in &confirmed {
            if self.seed_ids.contains(*id) || self.rejected_ids.contains(*id) {
                return Err(format!("{id} is both confirmed and seed/rejected"));
            }
        }
        if self.seed_ids.iter().any(|id| self.rejected_ids.contains(id)) {
            return Err("seed and rejected sets overlap".into());
        }
        if self.pending_queue.windows(2).any(|w| w[0].score < w[1].score) {
            return Err("pending queue is not sorted by descending score".into());
        }
        Ok(())
    }

    /// Writes the state atomically (temp file, then rename).
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, path)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let bytes = std::fs::read(path).map_err(|e| SimError::State(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| SimError::State(format!("{}: {e}", path.display())))?;
        let version = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("");
        if version != EXPANSION_SCHEMA_VERSION {
            return Err(SimError::State(format!(
                "{}: unsupported schema version `{version}`",
                path.display()
            )));
        }
        serde_json::from_value(value).map_err(|e| SimError::State(format!("{}: {e}", path.display())))
    }
}

/// Pure form of one loop step: stage `labels` against `state`'s queue,
/// apply them and re-rank.
pub fn expansion_step(
    state: &ExpansionState,
    labels: &BTreeMap<CaseId, TriageLabel>,
    corpus: &BTreeSet<CaseId>,
    index: &EmbeddingIndex,
) -> Result<ExpansionState, SimError> {
    let mut next = state.clone();
    for (id, label) in labels {
        next.stage(id, label.clone(), None)?;
    }
    next.advance(corpus, index)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::RootCauseClass;

    fn id(n: u64) -> CaseId {
        format!("p/r#{n}").parse().unwrap()
    }

    /// Seeds 1 and 2 on the axes; 3..=6 near seed 1; the rest spread far.
    fn fixture() -> (BTreeSet<CaseId>, EmbeddingIndex) {
        let mut idx = EmbeddingIndex::new("m", Default::default());
        idx.vectors.insert(id(1), vec![1.0, 0.0, 0.0]);
        idx.vectors.insert(id(2), vec![0.0, 1.0, 0.0]);
        for n in 3..=6 {
            idx.vectors.insert(id(n), vec![1.0, 0.05 * n as f64, 0.0]);
        }
        for n in 7..=12 {
            idx.vectors.insert(id(n), vec![0.0, 0.1, 1.0 + n as f64]);
        }
        let corpus = idx.vectors.keys().cloned().collect();
        (corpus, idx)
    }

    #[test]
    fn confirmed_cases_become_anchors() {
        let (corpus, idx) = fixture();
        let mut s = ExpansionState::new([id(1), id(2)].into(), 3, Aggregation::Max);
        s.refresh(&corpus, &idx).unwrap();
        let top: Vec<u64> = s.pending_queue.iter().map(|c| c.case_id.number).collect();
        assert_eq!(top, [3, 4, 5]);
        let labels = BTreeMap::from([
            (
                id(3),
                TriageLabel::ConfirmFlaky {
                    root_causes: vec![RootCause::Class(RootCauseClass::Randomness)],
                },
            ),
            (id(4), TriageLabel::Reject),
        ]);
        let next = expansion_step(&s, &labels, &corpus, &idx).unwrap();
        assert_eq!(next.iteration, 1);
        assert!(next.anchors().contains(&id(3)));
        assert!(next
            .pending_queue
            .iter()
            .all(|c| c.case_id != id(3) && c.case_id != id(4)));
        next.check_invariants().unwrap();
    }

    #[test]
    fn unknown_and_duplicate_labels_rejected() {
        let (corpus, idx) = fixture();
        let mut s = ExpansionState::new([id(1), id(2)].into(), 3, Aggregation::Max);
        s.refresh(&corpus, &idx).unwrap();
        assert_eq!(
            s.stage(&id(12), TriageLabel::Reject, None),
            Err(SimError::UnknownCandidate(id(12)))
        );
        assert_eq!(
            s.stage(&id(1), TriageLabel::Reject, None),
            Err(SimError::AlreadyLabeled(id(1)))
        );
        s.stage(&id(3), TriageLabel::Reject, None).unwrap();
        assert_eq!(
            s.stage(&id(3), TriageLabel::Reject, None),
            Err(SimError::AlreadyLabeled(id(3)))
        );
        assert_eq!(s.open_queue().count(), 2);
    }

    #[test]
    fn rejecting_everything_reaches_fixed_point() {
        let (corpus, idx) = fixture();
        let mut s = ExpansionState::new([id(1), id(2)].into(), 50, Aggregation::Max);
        s.refresh(&corpus, &idx).unwrap();
        let labels: BTreeMap<_, _> = s
            .pending_queue
            .iter()
            .map(|c| (c.case_id.clone(), TriageLabel::Reject))
            .collect();
        let next = expansion_step(&s, &labels, &corpus, &idx).unwrap();
        assert!(next.is_fixed_point());
        assert!(next.pending_queue.is_empty());
    }

    #[test]
    fn state_round_trips_through_disk() {
        let (corpus, idx) = fixture();
        let mut s = ExpansionState::new([id(1)].into(), 4, Aggregation::Max);
        s.refresh(&corpus, &idx).unwrap();
        s.stage(&id(3), TriageLabel::Reject, Some("rev".into())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        s.save(&path).unwrap();
        assert_eq!(ExpansionState::load(&path).unwrap(), s);
    }
}
