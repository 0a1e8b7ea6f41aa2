use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CaseArtifact, CaseId};

use super::SimError;

pub const DEFAULT_EMBEDDING_MODEL: &str = "mxbai-embed-large-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, SimError> {
        if values.is_empty() {
            return Err(SimError::ZeroVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite);
        }
        Ok(Self {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Which parts of a case are embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedScope {
    DescriptionOnly,
    #[default]
    WithComments,
}

/// `title \n body [\n comment ...]`, or `EmptyText` when nothing is left
/// after trimming.
pub fn case_text(case: &CaseArtifact, scope: EmbedScope) -> Result<String, SimError> {
    let mut text = format!("{}\n{}", case.title.trim(), case.description.trim());
    if scope == EmbedScope::WithComments {
        for c in &case.comments {
            text.push('\n');
            text.push_str(c.body.trim());
        }
    }
    if text.trim().is_empty() {
        return Err(SimError::EmptyText);
    }
    Ok(text)
}

/// Keeps the first `budget` whitespace-separated tokens.
pub fn truncate_tokens(text: &str, budget: usize) -> (String, bool) {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= budget {
        return (text.to_string(), false);
    }
    (tokens[..budget].join(" "), true)
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;

    /// Whitespace-token budget of the model input, if bounded.
    fn token_budget(&self) -> Option<usize> {
        None
    }

    async fn embed(&self, text: &str) -> Result<Vec<f64>, SimError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub vector: EmbeddingVector,
    pub truncated: bool,
}

pub async fn embed_case(case: &CaseArtifact, scope: EmbedScope, embedder: &dyn Embedder) -> Result<Embedded, SimError> {
    let text = case_text(case, scope)?;
    let (text, truncated) = match embedder.token_budget() {
        Some(b) => truncate_tokens(&text, b),
        None => (text, false),
    };
    let values = embedder.embed(&text).await?;
    Ok(Embedded {
        vector: EmbeddingVector::new(values, embedder.model_id())?,
        truncated,
    })
}

fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn unit_normal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Deterministic mock: every distinct text maps to a hash-seeded random unit
/// vector. Unrelated texts land nearly orthogonal in high dimension.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub model_id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            model_id: format!("mock-hash-{dim}"),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        unit_normal(&mut seeded_rng(&[self.model_id.as_bytes(), text.as_bytes()]), self.dim)
    }
}

#[async_trait]
impl Embedder for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn embed(&self, text: &str) -> Result<Vec<f64>, SimError> {
        Ok(self.vector(text))
    }
}

/// Deterministic mock with lexical overlap: the sum of per-token hash
/// vectors, so texts sharing vocabulary score higher.
#[derive(Debug, Clone)]
pub struct TokenHashEmbedder {
    pub dim: usize,
    pub model_id: String,
}

impl TokenHashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            model_id: format!("mock-tokens-{dim}"),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let lower = token.to_lowercase();
            let v = unit_normal(&mut seeded_rng(&[self.model_id.as_bytes(), lower.as_bytes()]), self.dim);
            acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        acc
    }
}

#[async_trait]
impl Embedder for TokenHashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn embed(&self, text: &str) -> Result<Vec<f64>, SimError> {
        let v = self.vector(text);
        if v.iter().all(|x| *x == 0.0) {
            return Err(SimError::EmptyText);
        }
        Ok(v)
    }
}

/// Mock with fixed vectors for chosen texts; other texts fall back to
/// [`HashEmbedder`].
#[derive(Debug, Clone)]
pub struct PlantedEmbedder {
    pub planted: BTreeMap<String, Vec<f64>>,
    pub fallback: HashEmbedder,
}

impl PlantedEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            planted: BTreeMap::new(),
            fallback: HashEmbedder::new(dim),
        }
    }

    pub fn plant(&mut self, text: impl Into<String>, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.fallback.dim, "planted vector has wrong dimension");
        self.planted.insert(text.into(), vector);
    }
}

#[async_trait]
impl Embedder for PlantedEmbedder {
    fn model_id(&self) -> &str {
        &self.fallback.model_id
    }

    async fn embed(&self, text: &str) -> Result<Vec<f64>, SimError> {
        Ok(match self.planted.get(text) {
            Some(v) => v.clone(),
            None => self.fallback.vector(text),
        })
    }
}

/// Embedding service over HTTP. Posts `{"model", "input"}` and accepts either
/// `{"embedding": [...]}` or `{"data": [{"embedding": [...]}]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    http: reqwest::Client,
    pub endpoint: String,
    pub model_id: String,
    pub api_key: Option<String>,
    pub token_budget: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedResponse {
    Plain { embedding: Vec<f64> },
    Data { data: Vec<EmbedDatum> },
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key: None,
            token_budget: Some(512),
        }
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn token_budget(&self) -> Option<usize> {
        self.token_budget
    }

    async fn embed(&self, text: &str) -> Result<Vec<f64>, SimError> {
        let mut req = self
            .http
            .post(&self.endpoint)
            .json(&serde_json::json!({ "model": self.model_id, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| SimError::Provider(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(SimError::Provider(format!("embedding endpoint returned {status}")));
        }
        let body: EmbedResponse = resp.json().await.map_err(|e| SimError::Provider(e.to_string()))?;
        match body {
            EmbedResponse::Plain { embedding } => Ok(embedding),
            EmbedResponse::Data { data } => data
                .into_iter()
                .next()
                .map(|d| d.embedding)
                .ok_or_else(|| SimError::Provider("empty data array".into())),
        }
    }
}

/// Embeddings for a corpus under one model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub model_id: String,
    pub scope: EmbedScope,
    pub vectors: BTreeMap<CaseId, Vec<f64>>,
    #[serde(default)]
    pub truncated: BTreeSet<CaseId>,
}

impl EmbeddingIndex {
    pub fn new(model_id: impl Into<String>, scope: EmbedScope) -> Self {
        Self {
            model_id: model_id.into(),
            scope,
            ..Default::default()
        }
    }

    pub fn get(&self, id: &CaseId) -> Option<EmbeddingVector> {
        self.vectors.get(id).map(|v| EmbeddingVector {
            values: v.clone(),
            model_id: self.model_id.clone(),
        })
    }

    pub fn insert(&mut self, id: CaseId, embedded: Embedded) -> Result<(), SimError> {
        if embedded.vector.model_id != self.model_id {
            return Err(SimError::ModelMismatch {
                expected: self.model_id.clone(),
                found: embedded.vector.model_id,
            });
        }
        if embedded.truncated {
            self.truncated.insert(id.clone());
        }
        self.vectors.insert(id, embedded.vector.values);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }
}

/// Embeds every case with at most `parallelism` requests in flight. Cases
/// with no text are skipped and reported.
pub async fn embed_corpus(
    cases: &[CaseArtifact],
    scope: EmbedScope,
    embedder: Arc<dyn Embedder>,
    parallelism: usize,
) -> Result<(EmbeddingIndex, Vec<CaseId>), SimError> {
    let mut index = EmbeddingIndex::new(embedder.model_id(), scope);
    let results: Vec<(CaseId, Result<Embedded, SimError>)> = stream::iter(cases.iter())
        .map(|case| {
            let embedder = embedder.clone();
            async move { (case.id.clone(), embed_case(case, scope, embedder.as_ref()).await) }
        })
        .buffer_unordered(parallelism.max(1))
        .collect()
        .await;
    let mut skipped = Vec::new();
    for (id, res) in results {
        match res {
            Ok(e) => index.insert(id, e)?,
            Err(SimError::EmptyText) => skipped.push(id),
            Err(e) => return Err(e),
        }
    }
    skipped.sort();
    Ok((index, skipped))
}
