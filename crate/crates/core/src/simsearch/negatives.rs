use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CaseId;

use super::{seed_similarity, Aggregation, EmbeddingIndex, SimError};

pub const DEFAULT_NEGATIVE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Max similarity to the seeds below the threshold.
    BelowThreshold,
    /// Surfaced by the ranker but rejected by a reviewer.
    HardNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeCandidate {
    pub case_id: CaseId,
    pub max_score: f64,
    pub source: NegativeSource,
}

#[derive(Debug, Clone)]
pub struct NegativeOptions {
    pub threshold: f64,
    pub n: usize,
    /// Reviewer-rejected cases to include ahead of threshold sampling.
    pub hard_negatives: Vec<CaseId>,
    pub seed: u64,
}

impl Default for NegativeOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_NEGATIVE_THRESHOLD,
            n: 71,
            hard_negatives: Vec::new(),
            seed: 0,
        }
    }
}

/// Up to `n` non-flaky candidates: hard negatives first, then a seeded
/// sample of cases whose max-over-seeds cosine is strictly below the
/// threshold. Output is sorted by case id.
pub fn sample_non_flaky(
    corpus: &BTreeSet<CaseId>,
    seeds: &BTreeSet<CaseId>,
    index: &EmbeddingIndex,
    options: &NegativeOptions,
) -> Result<Vec<NegativeCandidate>, SimError> {
    if !(options.threshold > 0.0 && options.threshold < 1.0) {
        return Err(SimError::BadThreshold(options.threshold));
    }
    let score = |id: &CaseId| -> Result<f64, SimError> {
        Ok(seed_similarity(index, id, seeds, Aggregation::Max)?.map_or(f64::NEG_INFINITY, |(s, _)| s))
    };

    let mut out: Vec<NegativeCandidate> = Vec::new();
    let mut hard: Vec<&CaseId> = options
        .hard_negatives
        .iter()
        .filter(|id| !seeds.contains(*id))
        .collect();
    hard.sort();
    hard.dedup();
    for id in hard.into_iter().take(options.n) {
        out.push(NegativeCandidate {
            case_id: id.clone(),
            max_score: score(id)?,
            source: NegativeSource::HardNegative,
        });
    }

    let taken: BTreeSet<CaseId> = out.iter().map(|c| c.case_id.clone()).collect();
    let mut eligible = Vec::new();
    for id in corpus {
        if seeds.contains(id) || taken.contains(id) {
            continue;
        }
        let s = score(id)?;
        if s < options.threshold {
            eligible.push(NegativeCandidate {
                case_id: id.clone(),
                max_score: s,
                source: NegativeSource::BelowThreshold,
            });
        }
    }
    eligible.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
    let room = options.n.saturating_sub(out.len());
    out.extend(eligible.into_iter().take(room));
    out.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(out)
}
