use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::CaseId;

use super::{EmbeddingIndex, EmbeddingVector, SimError};

pub const DEFAULT_QUEUE_SIZE: usize = 50;

fn raw_cosine(u: &[f64], v: &[f64]) -> Result<f64, SimError> {
    if u.len() != v.len() {
        return Err(SimError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(SimError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimError> {
    if u.model_id != v.model_id {
        return Err(SimError::ModelMismatch {
            expected: u.model_id.clone(),
            found: v.model_id.clone(),
        });
    }
    raw_cosine(&u.values, &v.values)
}

/// How similarity to several seeds is folded into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub case_id: CaseId,
    pub score: f64,
    pub nearest_seed_id: CaseId,
}

/// Score of `id` against `seeds` and the most similar seed. `None` when
/// there are no seeds.
pub fn seed_similarity(
    index: &EmbeddingIndex,
    id: &CaseId,
    seeds: &BTreeSet<CaseId>,
    aggregation: Aggregation,
) -> Result<Option<(f64, CaseId)>, SimError> {
    let v = index
        .vectors
        .get(id)
        .ok_or_else(|| SimError::MissingEmbedding(id.clone()))?;
    let mut best: Option<(f64, &CaseId)> = None;
    let mut sum = 0.0;
    for seed in seeds {
        let s = index
            .vectors
            .get(seed)
            .ok_or_else(|| SimError::MissingEmbedding(seed.clone()))?;
        let c = raw_cosine(v, s)?;
        sum += c;
        // seeds iterate in ascending id order, so ties keep the smaller id
        if best.is_none_or(|(b, _)| c > b) {
            best = Some((c, seed));
        }
    }
    Ok(best.map(|(max, seed)| {
        let score = match aggregation {
            Aggregation::Max => max,
            Aggregation::Mean => sum / seeds.len() as f64,
        };
        (score, seed.clone())
    }))
}

/// Top-`k` members of `corpus` by similarity to `seeds`, skipping seeds and
/// anything in `excluded`. Ties go to the smaller case id.
pub fn rank_candidates(
    corpus: &BTreeSet<CaseId>,
    seeds: &BTreeSet<CaseId>,
    excluded: &BTreeSet<CaseId>,
    index: &EmbeddingIndex,
    k: usize,
    aggregation: Aggregation,
) -> Result<Vec<RankedCandidate>, SimError> {
    let mut ranked = Vec::new();
    for id in corpus {
        if seeds.contains(id) || excluded.contains(id) {
            continue;
        }
        if let Some((score, nearest)) = seed_similarity(index, id, seeds, aggregation)? {
            ranked.push(RankedCandidate {
                case_id: id.clone(),
                score,
                nearest_seed_id: nearest,
            });
        }
    }
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.case_id.cmp(&b.case_id)));
    ranked.truncate(k);
    Ok(ranked)
}
