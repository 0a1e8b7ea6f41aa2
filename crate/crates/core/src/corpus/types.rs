use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Identity of a mined repository. `platform` doubles as the hosting owner
/// (organisation) name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RepositoryRef {
    pub platform: String,
    pub name: String,
    pub default_branch: String,
}

impl RepositoryRef {
    pub fn new(platform: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            platform: platform.into(),
            name: name.into(),
            default_branch: "main".to_string(),
        }
    }

    /// `platform/name`.
    pub fn slug(&self) -> String {
        format!("{}/{}", self.platform, self.name)
    }

    pub fn is_valid(&self) -> bool {
        !self.platform.trim().is_empty() && !self.name.trim().is_empty()
    }

    pub fn matches(&self, platform: &str, name: &str) -> bool {
        self.platform.eq_ignore_ascii_case(platform) && self.name.eq_ignore_ascii_case(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Issue,
    PullRequest,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Issue => "issue",
            ArtifactKind::PullRequest => "pull_request",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactState {
    Open,
    Closed,
}

/// Stable key `platform/name#number[:kind]`.
///
/// The kind suffix is only needed on platforms where issues and pull requests
/// have separate number spaces; ids minted from a GitHub-style API omit it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CaseId {
    pub platform: String,
    pub name: String,
    pub number: u64,
    pub kind: Option<ArtifactKind>,
}

impl CaseId {
    pub fn new(repo: &RepositoryRef, number: u64) -> Self {
        Self {
            platform: repo.platform.clone(),
            name: repo.name.clone(),
            number,
            kind: None,
        }
    }

    pub fn same_repo(&self, other: &CaseId) -> bool {
        self.platform.eq_ignore_ascii_case(&other.platform) && self.name.eq_ignore_ascii_case(&other.name)
    }

    pub fn repo_slug(&self) -> String {
        format!("{}/{}", self.platform, self.name)
    }

    /// File-system safe, reversible-enough directory name.
    pub fn dir_name(&self) -> String {
        let mut out = String::new();
        for ch in self.to_string().chars() {
            match ch {
                'a'..='z' | 'A'..='Z' | '0'..='9' | '-' | '_' | '.' => out.push(ch),
                '/' => out.push_str("__"),
                '#' => out.push_str("--"),
                ':' => out.push('~'),
                _ => out.push('_'),
            }
        }
        out
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}#{}", self.platform, self.name, self.number)?;
        if let Some(kind) = self.kind {
            write!(f, ":{}", kind.as_str())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed case id `{0}` (expected platform/name#number[:kind])")]
pub struct CaseIdParseError(pub String);

impl FromStr for CaseId {
    type Err = CaseIdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || CaseIdParseError(s.to_string());
        let (repo, rest) = s.rsplit_once('#').ok_or_else(err)?;
        let (platform, name) = repo.split_once('/').ok_or_else(err)?;
        let (number, kind) = match rest.split_once(':') {
            Some((n, "issue")) => (n, Some(ArtifactKind::Issue)),
            Some((n, "pull_request")) => (n, Some(ArtifactKind::PullRequest)),
            Some(_) => return Err(err()),
            None => (rest, None),
        };
        let number: u64 = number.parse().map_err(|_| err())?;
        if platform.is_empty() || name.is_empty() || number == 0 {
            return Err(err());
        }
        Ok(CaseId {
            platform: platform.to_string(),
            name: name.to_string(),
            number,
            kind,
        })
    }
}

impl Serialize for CaseId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CaseId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub author: String,
    pub created_at: DateTime<Utc>,
    pub body: String,
}

/// One issue report or pull request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseArtifact {
    pub id: CaseId,
    pub kind: ArtifactKind,
    pub number: u64,
    pub title: String,
    pub description: String,
    pub comments: Vec<Comment>,
    pub state: ArtifactState,
    #[serde(default)]
    pub linked_prs: Vec<CaseId>,
    #[serde(default)]
    pub linked_commits: Vec<String>,
}

impl CaseArtifact {
    pub fn new(
        repo: &RepositoryRef,
        kind: ArtifactKind,
        number: u64,
        title: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            id: CaseId::new(repo, number),
            kind,
            number,
            title: title.into(),
            description: description.into(),
            comments: Vec::new(),
            state: ArtifactState::Closed,
            linked_prs: Vec::new(),
            linked_commits: Vec::new(),
        }
    }

    /// Stable sort of the comment thread by creation time.
    pub fn sort_comments(&mut self) {
        self.comments.sort_by_key(|a| a.created_at);
    }

    pub fn comments_ordered(&self) -> bool {
        self.comments.windows(2).all(|w| w[0].created_at <= w[1].created_at)
    }

    /// Ordering key used everywhere artifacts are listed.
    pub fn order_key(&self) -> (String, String, ArtifactKind, u64) {
        (self.id.platform.clone(), self.id.name.clone(), self.kind, self.number)
    }
}

/// Metadata about one commit referenced by a case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub repo: String,
    pub sha: String,
    pub parents: Vec<String>,
    pub committed_at: DateTime<Utc>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PayloadKey {
    pub commit: String,
    pub path: String,
}

impl PayloadKey {
    pub fn new(commit: impl Into<String>, path: impl Into<String>) -> Self {
        Self {
            commit: commit.into(),
            path: path.into(),
        }
    }
}

/// A file that could not be retrieved at a given commit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FetchFailure {
    pub commit: String,
    pub path: String,
    pub reason: String,
}

/// Canonical offline copy of everything mined from the hosting API.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub created_at: DateTime<Utc>,
    pub repositories: Vec<RepositoryRef>,
    pub artifacts: Vec<CaseArtifact>,
    pub commits: Vec<CommitRecord>,
    pub file_payloads: BTreeMap<PayloadKey, Vec<u8>>,
    pub fetch_failures: Vec<FetchFailure>,
}

impl Snapshot {
    pub fn empty(created_at: DateTime<Utc>) -> Self {
        Self {
            created_at,
            repositories: Vec::new(),
            artifacts: Vec::new(),
            commits: Vec::new(),
            file_payloads: BTreeMap::new(),
            fetch_failures: Vec::new(),
        }
    }

    /// Puts every list into its canonical order. Called by constructors and
    /// ingestion so that serialisation is a pure function of content.
    pub fn canonicalize(&mut self) {
        self.repositories
            .sort_by(|a, b| (&a.platform, &a.name).cmp(&(&b.platform, &b.name)));
        self.repositories
            .dedup_by(|a, b| a.platform == b.platform && a.name == b.name);
        for artifact in &mut self.artifacts {
            artifact.sort_comments();
        }
        self.artifacts.sort_by_key(|a| a.order_key());
        self.commits.sort_by(|a, b| (&a.repo, &a.sha).cmp(&(&b.repo, &b.sha)));
        self.commits.dedup_by(|a, b| a.sha == b.sha);
        self.fetch_failures.sort();
        self.fetch_failures.dedup();
    }

    pub fn artifact(&self, id: &CaseId) -> Option<&CaseArtifact> {
        self.artifacts.iter().find(|a| &a.id == id)
    }

    pub fn find_number(&self, platform: &str, name: &str, number: u64) -> Option<&CaseArtifact> {
        self.artifacts.iter().find(|a| {
            a.number == number && a.id.platform.eq_ignore_ascii_case(platform) && a.id.name.eq_ignore_ascii_case(name)
        })
    }

    pub fn commit(&self, sha: &str) -> Option<&CommitRecord> {
        self.commits.iter().find(|c| c.sha == sha)
    }

    /// Resolves an abbreviated hash to a unique known commit.
    pub fn resolve_commit(&self, prefix: &str) -> Option<&CommitRecord> {
        let mut hits = self.commits.iter().filter(|c| c.sha.starts_with(prefix));
        let first = hits.next()?;
        hits.next().is_none().then_some(first)
    }

    pub fn payload(&self, commit: &str, path: &str) -> Option<&[u8]> {
        self.file_payloads
            .get(&PayloadKey::new(commit, path))
            .map(Vec::as_slice)
    }

    pub fn fetch_failed(&self, commit: &str, path: &str) -> bool {
        self.fetch_failures.iter().any(|f| f.commit == commit && f.path == path)
    }

    /// Count of closed issue reports per repository slug.
    pub fn closed_issue_totals(&self) -> BTreeMap<String, u64> {
        let mut totals: BTreeMap<String, u64> = self.repositories.iter().map(|r| (r.slug(), 0)).collect();
        for a in &self.artifacts {
            if a.kind == ArtifactKind::Issue && a.state == ArtifactState::Closed {
                *totals.entry(a.id.repo_slug()).or_default() += 1;
            }
        }
        totals
    }
}
