//! `qflake.toml`: one declarative run configuration. `${VAR}` references are
//! replaced from the environment before parsing, so secrets stay out of the
//! file. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use qflake_core::corpus::RepositoryRef;
use qflake_core::inference::ProviderConfig;
use qflake_core::simsearch::{EmbedScope, Embedder, HashEmbedder, HttpEmbedder, TokenHashEmbedder};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_CONFIG_FILE: &str = "qflake.toml";
pub const DEFAULT_TRIAGE_BIND: &str = "127.0.0.1:8787";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub snapshot: PathBuf,
    pub dataset: PathBuf,
    pub embeddings: PathBuf,
    pub expansion_state: PathBuf,
    pub verdicts: PathBuf,
    pub results: PathBuf,
    /// JSON map `platform/name` -> closed issue count, for the repository table.
    pub repo_totals: PathBuf,
    pub template: String,
    pub parallelism: usize,
    pub request_cap: Option<usize>,
    /// `all`, `base` or a comma-separated list of condition keys.
    pub conditions: String,
    pub hosting: HostingSection,
    pub embedding: EmbeddingSection,
    pub triage: TriageSection,
    pub providers: Vec<ProviderConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            snapshot: "snapshot".into(),
            dataset: "dataset".into(),
            embeddings: "embeddings.json".into(),
            expansion_state: "expansion.json".into(),
            verdicts: "verdicts.jsonl".into(),
            results: "results.jsonl".into(),
            repo_totals: "repo_totals.json".into(),
            template: "v1".into(),
            parallelism: 8,
            request_cap: None,
            conditions: "all".into(),
            hosting: HostingSection::default(),
            embedding: EmbeddingSection::default(),
            triage: TriageSection::default(),
            providers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HostingSection {
    pub base_url: String,
    pub token_env: String,
    pub max_in_flight: usize,
    /// `owner/name` entries.
    pub repositories: Vec<String>,
    /// Regexes over comment authors to drop (CI bots and the like).
    pub exclude_authors: Vec<String>,
}

impl Default for HostingSection {
    fn default() -> Self {
        Self {
            base_url: "https://api.github.com".into(),
            token_env: qflake_core::corpus::DEFAULT_TOKEN_ENV.into(),
            max_in_flight: 4,
            repositories: Vec::new(),
            exclude_authors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    TokenHash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: EmbedderKind,
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub scope: EmbedScope,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::TokenHash,
            endpoint: String::new(),
            model: qflake_core::simsearch::DEFAULT_EMBEDDING_MODEL.into(),
            dim: 256,
            scope: EmbedScope::WithComments,
        }
    }
}

impl EmbeddingSection {
    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, CliError> {
        if self.dim == 0 {
            return Err(CliError::Config("embedding.dim must be positive".into()));
        }
        Ok(match self.kind {
            EmbedderKind::Hash => Arc::new(HashEmbedder::new(self.dim)),
            EmbedderKind::TokenHash => Arc::new(TokenHashEmbedder::new(self.dim)),
            EmbedderKind::Http => {
                if self.endpoint.is_empty() {
                    return Err(CliError::Config(
                        "embedding.endpoint is required for kind = \"http\"".into(),
                    ));
                }
                Arc::new(HttpEmbedder::new(&self.endpoint, &self.model))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriageSection {
    pub bind: String,
    pub queue_size: usize,
    pub reviewer: Option<String>,
    /// Built UI assets, served at `/` when set.
    pub ui_dir: Option<PathBuf>,
}

impl Default for TriageSection {
    fn default() -> Self {
        Self {
            bind: DEFAULT_TRIAGE_BIND.into(),
            queue_size: qflake_core::simsearch::DEFAULT_QUEUE_SIZE,
            reviewer: None,
            ui_dir: None,
        }
    }
}

fn var_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}").unwrap())
}

/// Replaces `${VAR}` and `${VAR:-default}` outside comment lines.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, CliError> {
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        if line.trim_start().starts_with('#') {
            out.push_str(line);
            continue;
        }
        let mut last = 0;
        for cap in var_pattern().captures_iter(line) {
            let whole = cap.get(0).unwrap();
            let value = match (lookup(&cap[1]), cap.get(2)) {
                (Some(v), _) => v,
                (None, Some(default)) => default.as_str().to_string(),
                (None, None) => {
                    return Err(CliError::Config(format!("environment variable {} is not set", &cap[1])));
                }
            };
            out.push_str(&line[last..whole.start()]);
            out.push_str(&value);
            last = whole.end();
        }
        out.push_str(&line[last..]);
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let text = interpolate(text, |k| std::env::var(k).ok())?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        config.resolve(base);
        Ok(config)
    }

    /// Reads `path`; a missing file yields the defaults rooted at its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text, &base),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let mut config = RunConfig::default();
                config.resolve(&base);
                Ok(config)
            }
            Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
        }
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.snapshot,
            &mut self.dataset,
            &mut self.embeddings,
            &mut self.expansion_state,
            &mut self.verdicts,
            &mut self.results,
            &mut self.repo_totals,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(ui) = &mut self.triage.ui_dir {
            if ui.is_relative() {
                *ui = base.join(&*ui);
            }
        }
    }

    pub fn repositories(&self) -> Result<Vec<RepositoryRef>, CliError> {
        self.hosting.repositories.iter().map(|r| parse_repo(r)).collect()
    }

    pub fn provider(&self, name: &str) -> Option<&ProviderConfig> {
        self.providers.iter().find(|p| p.name == name)
    }
}

pub fn parse_repo(s: &str) -> Result<RepositoryRef, CliError> {
    match s.split_once('/') {
        Some((owner, name)) if !owner.is_empty() && !name.is_empty() && !name.contains('/') => {
            Ok(RepositoryRef::new(owner, name))
        }
        _ => Err(CliError::Config(format!("repository `{s}` is not owner/name"))),
    }
}
