//! Cross-reference resolution between issues, pull requests and commits.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use tracing::warn;

use super::types::{ArtifactKind, CaseArtifact, CaseId, Snapshot};

/// A reference found in text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Reference {
    /// `#N`, `owner/repo#N` or an issue/pull URL.
    Number {
        platform: Option<String>,
        name: Option<String>,
        number: u64,
    },
    /// Full or abbreviated commit hash (bare or inside a commit URL).
    Commit(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkWarning {
    DanglingNumber { reference: String },
    UnknownCommit { sha: String },
}

impl std::fmt::Display for LinkWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkWarning::DanglingNumber { reference } => {
                write!(f, "reference {reference} does not resolve to a known pull request")
            }
            LinkWarning::UnknownCommit { sha } => write!(f, "commit {sha} is not in the snapshot"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkOutcome {
    pub artifact: CaseArtifact,
    pub warnings: Vec<LinkWarning>,
}

struct Patterns {
    url: Regex,
    commit_url: Regex,
    qualified: Regex,
    bare: Regex,
    sha: Regex,
    closing: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        url: Regex::new(r"https?://[^\s/]+/([\w.-]+)/([\w.-]+)/(?:pull|issues)/(\d+)").unwrap(),
        commit_url: Regex::new(r"https?://[^\s/]+/[\w.-]+/[\w.-]+/commit/([0-9a-f]{7,40})").unwrap(),
        qualified: Regex::new(r"(?:^|[\s(\[])([\w.-]+)/([\w.-]+)#(\d+)\b").unwrap(),
        bare: Regex::new(r"(?:^|[^\w/#&])#(\d+)\b").unwrap(),
        sha: Regex::new(r"\b[0-9a-f]{7,40}\b").unwrap(),
        closing: Regex::new(r"(?i)\b(?:fix(?:e[sd])?|close[sd]?|resolve[sd]?)\s*:?\s+#(\d+)\b").unwrap(),
    })
}

fn looks_like_sha(s: &str) -> bool {
    s.bytes().any(|b| b.is_ascii_digit()) && s.bytes().any(|b| (b'a'..=b'f').contains(&b))
}

/// Extracts every reference from `text`, in first-occurrence order, deduplicated.
pub fn scan_references(text: &str) -> Vec<Reference> {
    let p = patterns();
    let mut found: Vec<Reference> = Vec::new();
    let mut push = |r: Reference| {
        if !found.contains(&r) {
            found.push(r);
        }
    };
    let mut url_spans = Vec::new();
    for cap in p.url.captures_iter(text) {
        url_spans.push(cap.get(0).unwrap().range());
        push(Reference::Number {
            platform: Some(cap[1].to_string()),
            name: Some(cap[2].to_string()),
            number: cap[3].parse().unwrap_or(0),
        });
    }
    for cap in p.commit_url.captures_iter(text) {
        url_spans.push(cap.get(0).unwrap().range());
        push(Reference::Commit(cap[1].to_string()));
    }
    let in_url = |pos: usize| url_spans.iter().any(|r| r.contains(&pos));
    for cap in p.qualified.captures_iter(text) {
        if in_url(cap.get(1).unwrap().start()) {
            continue;
        }
        push(Reference::Number {
            platform: Some(cap[1].to_string()),
            name: Some(cap[2].to_string()),
            number: cap[3].parse().unwrap_or(0),
        });
    }
    for cap in p.bare.captures_iter(text) {
        push(Reference::Number {
            platform: None,
            name: None,
            number: cap[1].parse().unwrap_or(0),
        });
    }
    for m in p.sha.find_iter(text) {
        if in_url(m.start()) || !looks_like_sha(m.as_str()) {
            continue;
        }
        push(Reference::Commit(m.as_str().to_string()));
    }
    found.retain(|r| !matches!(r, Reference::Number { number: 0, .. }));
    found
}

fn artifact_text(a: &CaseArtifact) -> impl Iterator<Item = &str> {
    std::iter::once(a.description.as_str()).chain(a.comments.iter().map(|c| c.body.as_str()))
}

/// Numbers of issues a pull request declares it closes (`fixes #N` etc.).
pub fn closing_references(pr: &CaseArtifact) -> BTreeSet<u64> {
    let p = patterns();
    artifact_text(pr)
        .flat_map(|t| {
            p.closing
                .captures_iter(t)
                .filter_map(|c| c[1].parse().ok())
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Populates `linked_prs` and `linked_commits` of `artifact` from textual
/// cross-references, resolved against `snapshot`. Existing links are kept;
/// unresolvable references are dropped and reported as warnings.
pub fn link_case(artifact: &CaseArtifact, snapshot: &Snapshot) -> LinkOutcome {
    let mut out = artifact.clone();
    let mut warnings = Vec::new();
    let mut prs: BTreeSet<CaseId> = out.linked_prs.iter().cloned().collect();
    let mut commits: Vec<String> = out.linked_commits.clone();

    let refs: Vec<Reference> = {
        let mut all = Vec::new();
        for text in artifact_text(artifact) {
            for r in scan_references(text) {
                if !all.contains(&r) {
                    all.push(r);
                }
            }
        }
        all
    };

    for r in refs {
        match r {
            Reference::Number { platform, name, number } => {
                let platform = platform.unwrap_or_else(|| artifact.id.platform.clone());
                let name = name.unwrap_or_else(|| artifact.id.name.clone());
                match snapshot.find_number(&platform, &name, number) {
                    Some(target) if target.kind == ArtifactKind::PullRequest => {
                        if target.id != artifact.id {
                            prs.insert(target.id.clone());
                        }
                    }
                    // references to other issues are not fix links
                    Some(_) => {}
                    None => {
                        let reference = format!("{platform}/{name}#{number}");
                        warn!(case = %artifact.id, %reference, "dropping dangling reference");
                        warnings.push(LinkWarning::DanglingNumber { reference });
                    }
                }
            }
            Reference::Commit(prefix) => match snapshot.resolve_commit(&prefix) {
                Some(c) => {
                    if !commits.contains(&c.sha) {
                        commits.push(c.sha.clone());
                    }
                }
                None => {
                    warn!(case = %artifact.id, sha = %prefix, "dropping unknown commit reference");
                    warnings.push(LinkWarning::UnknownCommit { sha: prefix });
                }
            },
        }
    }

    // Pull requests that declare they close this issue.
    if artifact.kind == ArtifactKind::Issue {
        for pr in snapshot
            .artifacts
            .iter()
            .filter(|a| a.kind == ArtifactKind::PullRequest && a.id.same_repo(&artifact.id))
        {
            if closing_references(pr).contains(&artifact.number) {
                prs.insert(pr.id.clone());
            }
        }
    }

    prs.remove(&artifact.id);
    out.linked_prs = prs.into_iter().collect();
    out.linked_commits = commits;
    LinkOutcome {
        artifact: out,
        warnings,
    }
}

/// Groups artifacts into analysis cases: each issue together with its linked
/// pull requests, plus every pull request that no issue links to.
pub fn build_cases(snapshot: &Snapshot) -> Vec<CaseArtifact> {
    let claimed: BTreeSet<&CaseId> = snapshot
        .artifacts
        .iter()
        .filter(|a| a.kind == ArtifactKind::Issue)
        .flat_map(|a| a.linked_prs.iter())
        .collect();
    snapshot
        .artifacts
        .iter()
        .filter(|a| a.kind == ArtifactKind::Issue || !claimed.contains(&a.id))
        .cloned()
        .collect()
}

/// Commit hashes that fix `case`: its own links plus those of linked PRs.
pub fn case_commits(case: &CaseArtifact, snapshot: &Snapshot) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let linked = case.linked_prs.iter().filter_map(|id| snapshot.artifact(id));
    for sha in case
        .linked_commits
        .iter()
        .chain(linked.flat_map(|pr| pr.linked_commits.iter()))
    {
        if !out.contains(sha) {
            out.push(sha.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::{CommitRecord, RepositoryRef};
    use chrono::{TimeZone, Utc};

    fn snapshot() -> Snapshot {
        let repo = RepositoryRef::new("Qiskit", "qiskit");
        let mut s = Snapshot::empty(Utc.timestamp_opt(0, 0).unwrap());
        s.repositories.push(repo.clone());
        s.artifacts.push(CaseArtifact::new(
            &repo,
            ArtifactKind::Issue,
            5217,
            "test_append_circuit fails randomly",
            "fixed by #5599",
        ));
        let mut pr = CaseArtifact::new(
            &repo,
            ArtifactKind::PullRequest,
            5599,
            "Seed random circuits",
            "Fixes #5217",
        );
        pr.linked_commits.push("3f2a9c1d00aa".into());
        s.artifacts.push(pr);
        s.commits.push(CommitRecord {
            repo: repo.slug(),
            sha: "3f2a9c1d00aa".into(),
            parents: vec!["0000aaaa1111".into()],
            committed_at: Utc.timestamp_opt(10, 0).unwrap(),
            files: vec!["test/test_x.py".into()],
        });
        s
    }

    #[test]
    fn scans_all_reference_shapes() {
        let refs = scan_references(
            "see #12, Qiskit/qiskit-aer#7, https://github.com/Qiskit/qiskit/pull/5599 and 3f2a9c1 (deadbeef is a word) 1234567",
        );
        assert!(refs.contains(&Reference::Number {
            platform: None,
            name: None,
            number: 12
        }));
        assert!(refs.contains(&Reference::Number {
            platform: Some("Qiskit".into()),
            name: Some("qiskit-aer".into()),
            number: 7
        }));
        assert!(refs.contains(&Reference::Number {
            platform: Some("Qiskit".into()),
            name: Some("qiskit".into()),
            number: 5599
        }));
        assert!(refs.contains(&Reference::Commit("3f2a9c1".into())));
        assert!(!refs
            .iter()
            .any(|r| matches!(r, Reference::Commit(c) if c == "1234567" || c == "deadbeef")));
    }

    #[test]
    fn fixed_by_links_pr() {
        let s = snapshot();
        let issue = &s.artifacts[0];
        let out = link_case(issue, &s);
        assert!(out
            .artifact
            .linked_prs
            .iter()
            .any(|id| id.to_string().ends_with("#5599")));
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn no_references_leaves_links_unchanged() {
        let s = snapshot();
        let mut a = s.artifacts[0].clone();
        a.description = "nothing to see".into();
        a.linked_commits = vec!["keep".into()];
        let mut s2 = s.clone();
        // drop the closing reference from the PR so only text matters
        s2.artifacts[1].description = String::new();
        let out = link_case(&a, &s2);
        assert_eq!(out.artifact.linked_prs, a.linked_prs);
        assert_eq!(out.artifact.linked_commits, a.linked_commits);
    }

    #[test]
    fn dangling_reference_dropped_with_warning() {
        let s = snapshot();
        let mut a = s.artifacts[0].clone();
        a.description = "see #9999".into();
        let out = link_case(&a, &s);
        assert!(!out.artifact.linked_prs.iter().any(|id| id.number == 9999));
        assert_eq!(
            out.warnings,
            vec![LinkWarning::DanglingNumber {
                reference: "Qiskit/qiskit#9999".into()
            }]
        );
    }

    #[test]
    fn pull_request_never_links_itself() {
        let s = snapshot();
        let mut pr = s.artifacts[1].clone();
        pr.description = "this is #5599, see 3f2a9c1".into();
        let out = link_case(&pr, &s);
        assert!(out.artifact.linked_prs.is_empty());
        assert_eq!(out.artifact.linked_commits, vec!["3f2a9c1d00aa".to_string()]);
    }

    #[test]
    fn pairing_absorbs_linked_prs() {
        let mut s = snapshot();
        let linked = link_case(&s.artifacts[0], &s).artifact;
        s.artifacts[0] = linked;
        let cases = build_cases(&s);
        assert_eq!(cases.len(), 1);
        assert_eq!(case_commits(&cases[0], &s), vec!["3f2a9c1d00aa".to_string()]);
    }
}
