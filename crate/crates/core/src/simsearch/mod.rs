//! Embedding similarity search: ranking corpus cases against known flaky
//! seeds, the reviewed expansion loop, and negative sampling.

mod embed;
mod expansion;
mod negatives;
mod rank;

pub use embed::{
    case_text, embed_case, embed_corpus, truncate_tokens, EmbedScope, Embedded, Embedder, EmbeddingIndex,
    EmbeddingVector, HashEmbedder, HttpEmbedder, PlantedEmbedder, TokenHashEmbedder, DEFAULT_EMBEDDING_MODEL,
};
pub use expansion::{expansion_step, ExpansionState, LabelRecord, TriageLabel, EXPANSION_SCHEMA_VERSION};
pub use negatives::{sample_non_flaky, NegativeCandidate, NegativeOptions, NegativeSource, DEFAULT_NEGATIVE_THRESHOLD};
pub use rank::{cosine, rank_candidates, seed_similarity, Aggregation, RankedCandidate, DEFAULT_QUEUE_SIZE};

use crate::corpus::CaseId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("case has no text to embed")]
    EmptyText,
    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero-length vector")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("embedding model mismatch: expected {expected}, found {found}")]
    ModelMismatch { expected: String, found: String },
    #[error("no embedding for {0}")]
    MissingEmbedding(CaseId),
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("{0} is not in the pending queue")]
    UnknownCandidate(CaseId),
    #[error("{0} is already labeled")]
    AlreadyLabeled(CaseId),
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("expansion state: {0}")]
    State(String),
}
