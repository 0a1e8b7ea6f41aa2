//! Read-only client for a GitHub-style hosting REST API.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt, TryStreamExt};
use regex::Regex;
use reqwest::{header, StatusCode};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::Semaphore;
use tracing::{debug, info, warn};

use super::link::{case_commits, link_case, scan_references, Reference};
use super::types::{
    ArtifactKind, ArtifactState, CaseArtifact, CaseId, Comment, CommitRecord, FetchFailure, PayloadKey, RepositoryRef,
    Snapshot,
};

pub const DEFAULT_TOKEN_ENV: &str = "GITHUB_TOKEN";
const PER_PAGE: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("authentication rejected by {url}")]
    Auth { url: String },
    #[error("rate limited; retry after {retry_after:?}")]
    RateLimited { retry_after: Duration },
    #[error("not found: {url}")]
    NotFound { url: String },
    #[error("unexpected status {status} from {url}")]
    Status { status: u16, url: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed payload from {url}: {reason}")]
    Decode { url: String, reason: String },
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub base_url: String,
    pub token: Option<String>,
    /// Maximum concurrent in-flight requests.
    pub max_in_flight: usize,
    /// Comments whose author matches any of these patterns are dropped.
    pub exclude_authors: Vec<String>,
    /// Times a rate-limited request is retried after honouring `retry-after`.
    pub rate_limit_retries: u32,
    /// Upper bound on a single rate-limit wait.
    pub max_rate_limit_wait: Duration,
    pub timeout: Duration,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.github.com".to_string(),
            token: None,
            max_in_flight: 4,
            exclude_authors: Vec::new(),
            rate_limit_retries: 3,
            max_rate_limit_wait: Duration::from_secs(120),
            timeout: Duration::from_secs(30),
        }
    }
}

impl FetchConfig {
    pub fn with_token_from_env(mut self, var: &str) -> Self {
        self.token = std::env::var(var).ok().filter(|t| !t.is_empty());
        self
    }
}

#[derive(Deserialize)]
struct ApiUser {
    login: String,
}

#[derive(Deserialize)]
struct ApiIssue {
    number: u64,
    title: String,
    body: Option<String>,
    state: String,
    pull_request: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct ApiComment {
    user: Option<ApiUser>,
    created_at: DateTime<Utc>,
    body: Option<String>,
}

#[derive(Deserialize)]
struct ApiSha {
    sha: String,
}

#[derive(Deserialize)]
struct ApiCommitMeta {
    committer: Option<ApiCommitter>,
    author: Option<ApiCommitter>,
}

#[derive(Deserialize)]
struct ApiCommitter {
    date: DateTime<Utc>,
}

#[derive(Deserialize)]
struct ApiFile {
    filename: String,
}

#[derive(Deserialize)]
struct ApiCommit {
    sha: String,
    parents: Vec<ApiSha>,
    commit: ApiCommitMeta,
    #[serde(default)]
    files: Vec<ApiFile>,
}

#[derive(Deserialize)]
struct ApiContent {
    content: String,
    encoding: String,
}

#[derive(Deserialize)]
struct ApiTimelineEvent {
    event: Option<String>,
    commit_id: Option<String>,
    source: Option<ApiTimelineSource>,
}

#[derive(Deserialize)]
struct ApiTimelineSource {
    issue: Option<ApiIssue>,
}

/// Links announced by the hosting platform's event stream for one artifact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLinks {
    pub pr_numbers: BTreeSet<u64>,
    pub commits: BTreeSet<String>,
}

#[derive(Clone)]
pub struct HostingClient {
    http: reqwest::Client,
    config: Arc<FetchConfig>,
    permits: Arc<Semaphore>,
    exclude: Arc<Vec<Regex>>,
}

impl HostingClient {
    pub fn new(config: FetchConfig) -> Result<Self, FetchError> {
        let exclude = config
            .exclude_authors
            .iter()
            .map(|p| Regex::new(p).map_err(|e| FetchError::Transport(format!("bad author pattern {p}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .user_agent("qflake/0.1")
            .build()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            permits: Arc::new(Semaphore::new(config.max_in_flight.max(1))),
            exclude: Arc::new(exclude),
            config: Arc::new(config),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    async fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, FetchError> {
        let url = self.url(path);
        let mut attempt = 0;
        loop {
            let response = {
                let _permit = self.permits.acquire().await.expect("semaphore closed");
                let mut req = self
                    .http
                    .get(&url)
                    .header(header::ACCEPT, "application/vnd.github+json");
                if let Some(token) = &self.config.token {
                    req = req.bearer_auth(token);
                }
                req.send().await.map_err(|e| FetchError::Transport(e.to_string()))?
            };
            match classify(&url, &response) {
                Ok(()) => {
                    let text = response
                        .text()
                        .await
                        .map_err(|e| FetchError::Transport(e.to_string()))?;
                    return serde_json::from_str(&text).map_err(|e| FetchError::Decode {
                        url: url.clone(),
                        reason: e.to_string(),
                    });
                }
                Err(FetchError::RateLimited { retry_after }) if attempt < self.config.rate_limit_retries => {
                    attempt += 1;
                    let wait = retry_after.min(self.config.max_rate_limit_wait);
                    warn!(%url, ?wait, attempt, "rate limited, backing off");
                    tokio::time::sleep(wait).await;
                }
                Err(e) => return Err(e),
            }
        }
    }

    async fn get_paged<T: DeserializeOwned>(&self, path: &str) -> Result<Vec<T>, FetchError> {
        let sep = if path.contains('?') { '&' } else { '?' };
        let mut all = Vec::new();
        for page in 1.. {
            let batch: Vec<T> = self
                .get_json(&format!("{path}{sep}per_page={PER_PAGE}&page={page}"))
                .await?;
            let n = batch.len();
            all.extend(batch);
            if n < PER_PAGE {
                break;
            }
        }
        Ok(all)
    }

    fn keep_author(&self, author: &str) -> bool {
        !self.exclude.iter().any(|re| re.is_match(author))
    }

    /// Every closed issue and pull request of `repo` with its full comment
    /// thread, ordered by (kind, number).
    pub async fn fetch_closed_artifacts(&self, repo: &RepositoryRef) -> Result<Vec<CaseArtifact>, FetchError> {
        let base = format!("/repos/{}/{}", repo.platform, repo.name);
        let issues: Vec<ApiIssue> = self.get_paged(&format!("{base}/issues?state=closed")).await?;
        info!(repo = %repo.slug(), count = issues.len(), "listed closed artifacts");

        let limit = self.config.max_in_flight.max(1);
        let mut artifacts: Vec<CaseArtifact> = stream::iter(issues.into_iter().filter(|i| i.state == "closed"))
            .map(|issue| {
                let base = base.clone();
                async move {
                    let kind = if issue.pull_request.is_some() {
                        ArtifactKind::PullRequest
                    } else {
                        ArtifactKind::Issue
                    };
                    let comments: Vec<ApiComment> = self
                        .get_paged(&format!("{base}/issues/{}/comments", issue.number))
                        .await?;
                    let mut artifact =
                        CaseArtifact::new(repo, kind, issue.number, issue.title, issue.body.unwrap_or_default());
                    artifact.state = ArtifactState::Closed;
                    artifact.comments = comments
                        .into_iter()
                        .map(|c| Comment {
                            author: c.user.map(|u| u.login).unwrap_or_default(),
                            created_at: c.created_at,
                            body: c.body.unwrap_or_default(),
                        })
                        .filter(|c| self.keep_author(&c.author))
                        .collect();
                    artifact.sort_comments();
                    if kind == ArtifactKind::PullRequest {
                        let commits: Vec<ApiSha> = self
                            .get_paged(&format!("{base}/pulls/{}/commits", issue.number))
                            .await?;
                        artifact.linked_commits = commits.into_iter().map(|c| c.sha).collect();
                    }
                    Ok::<_, FetchError>(artifact)
                }
            })
            .buffer_unordered(limit)
            .try_collect()
            .await?;
        artifacts.sort_by_key(|a| (a.kind, a.number));
        Ok(artifacts)
    }

    /// Cross-reference and commit events, when the platform exposes a timeline.
    pub async fn fetch_event_links(&self, repo: &RepositoryRef, number: u64) -> Result<EventLinks, FetchError> {
        let path = format!("/repos/{}/{}/issues/{number}/timeline", repo.platform, repo.name);
        let events: Vec<ApiTimelineEvent> = match self.get_paged(&path).await {
            Ok(e) => e,
            Err(FetchError::NotFound { .. }) => return Ok(EventLinks::default()),
            Err(e) => return Err(e),
        };
        let mut links = EventLinks::default();
        for ev in events {
            match ev.event.as_deref() {
                Some("cross-referenced") => {
                    if let Some(issue) = ev.source.and_then(|s| s.issue) {
                        if issue.pull_request.is_some() {
                            links.pr_numbers.insert(issue.number);
                        }
                    }
                }
                Some("referenced") | Some("closed") => {
                    if let Some(sha) = ev.commit_id {
                        links.commits.insert(sha);
                    }
                }
                _ => {}
            }
        }
        Ok(links)
    }

    pub async fn fetch_commit(&self, repo: &RepositoryRef, sha: &str) -> Result<CommitRecord, FetchError> {
        let c: ApiCommit = self
            .get_json(&format!("/repos/{}/{}/commits/{sha}", repo.platform, repo.name))
            .await?;
        let committed_at = c
            .commit
            .committer
            .or(c.commit.author)
            .map(|x| x.date)
            .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
        Ok(CommitRecord {
            repo: repo.slug(),
            sha: c.sha,
            parents: c.parents.into_iter().map(|p| p.sha).collect(),
            committed_at,
            files: c.files.into_iter().map(|f| f.filename).collect(),
        })
    }

    /// Raw bytes of `path` at `git_ref`.
    pub async fn fetch_file(&self, repo: &RepositoryRef, git_ref: &str, path: &str) -> Result<Vec<u8>, FetchError> {
        let url_path = format!("/repos/{}/{}/contents/{path}?ref={git_ref}", repo.platform, repo.name);
        let content: ApiContent = self.get_json(&url_path).await?;
        if content.encoding != "base64" {
            return Err(FetchError::Decode {
                url: self.url(&url_path),
                reason: format!("unsupported encoding {}", content.encoding),
            });
        }
        let cleaned: String = content.content.split_whitespace().collect();
        base64::engine::general_purpose::STANDARD
            .decode(cleaned)
            .map_err(|e| FetchError::Decode {
                url: self.url(&url_path),
                reason: e.to_string(),
            })
    }
}

fn classify(url: &str, response: &reqwest::Response) -> Result<(), FetchError> {
    let status = response.status();
    if status.is_success() {
        return Ok(());
    }
    let headers = response.headers();
    let remaining_zero = headers
        .get("x-ratelimit-remaining")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.trim() == "0");
    match status {
        StatusCode::UNAUTHORIZED => Err(FetchError::Auth { url: url.to_string() }),
        StatusCode::TOO_MANY_REQUESTS => Err(FetchError::RateLimited {
            retry_after: retry_after(headers),
        }),
        StatusCode::FORBIDDEN if remaining_zero || headers.contains_key(header::RETRY_AFTER) => {
            Err(FetchError::RateLimited {
                retry_after: retry_after(headers),
            })
        }
        StatusCode::FORBIDDEN => Err(FetchError::Auth { url: url.to_string() }),
        StatusCode::NOT_FOUND => Err(FetchError::NotFound { url: url.to_string() }),
        other => Err(FetchError::Status {
            status: other.as_u16(),
            url: url.to_string(),
        }),
    }
}

fn retry_after(headers: &header::HeaderMap) -> Duration {
    if let Some(secs) = headers
        .get(header::RETRY_AFTER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
    {
        return Duration::from_secs(secs);
    }
    if let Some(reset) = headers
        .get("x-ratelimit-reset")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<i64>().ok())
    {
        let now = Utc::now().timestamp();
        return Duration::from_secs(reset.saturating_sub(now).max(0) as u64);
    }
    Duration::from_secs(60)
}

/// Full ingestion: artifacts, event links, textual links, commit metadata and
/// the pre-/post-fix payloads of every file touched by a case's fix.
pub async fn ingest(
    client: &HostingClient,
    repos: &[RepositoryRef],
    created_at: DateTime<Utc>,
) -> Result<Snapshot, FetchError> {
    let mut snapshot = Snapshot::empty(created_at);
    snapshot.repositories = repos.to_vec();

    let limit = client.config.max_in_flight.max(1);
    let per_repo: Vec<Vec<CaseArtifact>> = stream::iter(repos)
        .map(|r| client.fetch_closed_artifacts(r))
        .buffered(limit)
        .try_collect()
        .await?;
    snapshot.artifacts = per_repo.into_iter().flatten().collect();

    // Event links for issues.
    let issue_ids: Vec<(RepositoryRef, u64)> = snapshot
        .artifacts
        .iter()
        .filter(|a| a.kind == ArtifactKind::Issue)
        .filter_map(|a| repo_of(repos, &a.id).map(|r| (r.clone(), a.number)))
        .collect();
    let events: Vec<((RepositoryRef, u64), EventLinks)> = stream::iter(issue_ids)
        .map(|(repo, n)| async move {
            let links = client.fetch_event_links(&repo, n).await?;
            Ok::<_, FetchError>(((repo, n), links))
        })
        .buffered(limit)
        .try_collect()
        .await?;

    // Commits announced by events or mentioned in text.
    let mut wanted: BTreeSet<(String, String)> = BTreeSet::new();
    for a in &snapshot.artifacts {
        for sha in &a.linked_commits {
            wanted.insert((a.id.repo_slug(), sha.clone()));
        }
        let texts = std::iter::once(&a.description).chain(a.comments.iter().map(|c| &c.body));
        for t in texts {
            for r in scan_references(t) {
                if let Reference::Commit(sha) = r {
                    wanted.insert((a.id.repo_slug(), sha));
                }
            }
        }
    }
    for ((repo, _), links) in &events {
        for sha in &links.commits {
            wanted.insert((repo.slug(), sha.clone()));
        }
    }
    let fetched: Vec<Option<CommitRecord>> = stream::iter(wanted)
        .map(|(slug, sha)| async move {
            let repo = repos.iter().find(|r| r.slug() == slug)?;
            match client.fetch_commit(repo, &sha).await {
                Ok(c) => Some(c),
                Err(e) => {
                    debug!(%sha, error = %e, "commit not retrievable, link will be dropped");
                    None
                }
            }
        })
        .buffer_unordered(limit)
        .collect()
        .await;
    snapshot.commits = fetched.into_iter().flatten().collect();
    snapshot.canonicalize();

    // Merge event links, then textual links.
    for ((repo, number), links) in events {
        let prs: Vec<CaseId> = links
            .pr_numbers
            .iter()
            .filter_map(|n| snapshot.find_number(&repo.platform, &repo.name, *n))
            .filter(|a| a.kind == ArtifactKind::PullRequest)
            .map(|a| a.id.clone())
            .collect();
        let commits: Vec<String> = links
            .commits
            .iter()
            .filter(|sha| snapshot.commit(sha).is_some())
            .cloned()
            .collect();
        if let Some(a) = snapshot
            .artifacts
            .iter_mut()
            .find(|a| a.number == number && a.id.platform == repo.platform && a.id.name == repo.name)
        {
            for id in prs {
                if !a.linked_prs.contains(&id) {
                    a.linked_prs.push(id);
                }
            }
            for sha in commits {
                if !a.linked_commits.contains(&sha) {
                    a.linked_commits.push(sha);
                }
            }
        }
    }
    let linked: Vec<CaseArtifact> = snapshot
        .artifacts
        .iter()
        .map(|a| link_case(a, &snapshot).artifact)
        .collect();
    snapshot.artifacts = linked;

    fetch_payloads(client, repos, &mut snapshot).await;
    snapshot.canonicalize();
    Ok(snapshot)
}

fn repo_of<'a>(repos: &'a [RepositoryRef], id: &CaseId) -> Option<&'a RepositoryRef> {
    repos.iter().find(|r| r.matches(&id.platform, &id.name))
}

/// Fetches pre-fix (parent of first commit) and post-fix (last commit)
/// contents for every file touched by each case. Failures are recorded.
pub async fn fetch_payloads(client: &HostingClient, repos: &[RepositoryRef], snapshot: &mut Snapshot) {
    let mut wanted: BTreeSet<(String, PayloadKey)> = BTreeSet::new();
    for case in super::link::build_cases(snapshot) {
        let mut commits: Vec<&CommitRecord> = case_commits(&case, snapshot)
            .iter()
            .filter_map(|sha| snapshot.commit(sha))
            .collect();
        commits.sort_by_key(|c| c.committed_at);
        let (Some(first), Some(last)) = (commits.first(), commits.last()) else {
            continue;
        };
        let files: BTreeSet<&String> = commits.iter().flat_map(|c| c.files.iter()).collect();
        for path in files {
            if let Some(parent) = first.parents.first() {
                wanted.insert((first.repo.clone(), PayloadKey::new(parent.clone(), path.clone())));
            }
            wanted.insert((last.repo.clone(), PayloadKey::new(last.sha.clone(), path.clone())));
        }
    }
    let limit = client.config.max_in_flight.max(1);
    let results: Vec<(PayloadKey, Result<Vec<u8>, FetchError>)> = stream::iter(wanted)
        .map(|(slug, key)| async move {
            let Some(repo) = repos.iter().find(|r| r.slug() == slug) else {
                return (key, Err(FetchError::NotFound { url: slug }));
            };
            let res = client.fetch_file(repo, &key.commit, &key.path).await;
            (key, res)
        })
        .buffer_unordered(limit)
        .collect()
        .await;
    for (key, res) in results {
        match res {
            Ok(bytes) => {
                snapshot.file_payloads.insert(key, bytes);
            }
            // absent at that ref: file added or deleted by the fix
            Err(FetchError::NotFound { .. }) => {}
            Err(e) => snapshot.fetch_failures.push(FetchFailure {
                commit: key.commit,
                path: key.path,
                reason: e.to_string(),
            }),
        }
    }
}
