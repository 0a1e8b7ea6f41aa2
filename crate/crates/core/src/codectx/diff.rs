use serde::{Deserialize, Serialize};
use similar::{capture_diff_slices, Algorithm, DiffOp};

use crate::corpus::{case_commits, CaseArtifact, CommitRecord, Snapshot};

use super::CodeCtxError;

/// 1-based inclusive line range, serialised as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct LineRange {
    pub start: usize,
    pub end: usize,
}

impl LineRange {
    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }

    pub fn lines(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }
}

impl From<[usize; 2]> for LineRange {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<LineRange> for [usize; 2] {
    fn from(r: LineRange) -> Self {
        [r.start, r.end]
    }
}

/// One file touched by a fix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: String,
    pub before: Option<String>,
    pub after: Option<String>,
    pub changed_line_ranges_before: Vec<LineRange>,
    /// The pre-fix payload could not be retrieved.
    #[serde(default)]
    pub fetch_failed: bool,
}

#[cfg(test)]
/// 0-based indices of `before` lines removed or rewritten by a minimal (longest-common-subsequence) line diff.
pub(crate) fn removed_lines(before: &[&str], after: &[&str]) -> Vec<usize> {
    let mut out = Vec::new();
    for op in capture_diff_slices(Algorithm::Myers, before, after) {
        match op {
            DiffOp::Delete { old_index, old_len, .. } | DiffOp::Replace { old_index, old_len, .. } => {
                out.extend(old_index..old_index + old_len);
            }
            DiffOp::Equal { .. } | DiffOp::Insert { .. } => {}
        }
    }
    out
}

/// Lines of `before` touched by the change, as merged 1-based ranges.
///
/// Removed or rewritten lines count directly. A pure insertion is anchored
/// to the `before` line preceding the insertion point (or line 1 when it
/// precedes everything).
pub fn changed_ranges(before: &str, after: &str) -> Vec<LineRange> {
    let old: Vec<&str> = before.lines().collect();
    let new: Vec<&str> = after.lines().collect();
    let mut touched: Vec<usize> = Vec::new();
    for op in capture_diff_slices(Algorithm::Myers, &old, &new) {
        match op {
            DiffOp::Delete { old_index, old_len, .. } | DiffOp::Replace { old_index, old_len, .. } => {
                touched.extend(old_index + 1..=old_index + old_len);
            }
            DiffOp::Insert { old_index, .. } if !old.is_empty() => {
                touched.push(old_index.max(1));
            }
            _ => {}
        }
    }
    merge_lines(touched)
}

fn merge_lines(mut lines: Vec<usize>) -> Vec<LineRange> {
    lines.sort_unstable();
    lines.dedup();
    let mut ranges: Vec<LineRange> = Vec::new();
    for l in lines {
        match ranges.last_mut() {
            Some(r) if r.end + 1 >= l => r.end = r.end.max(l),
            _ => ranges.push(LineRange { start: l, end: l }),
        }
    }
    ranges
}

fn decode(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Fix commits of `case` in commit order.
pub fn fix_commits<'a>(case: &CaseArtifact, snapshot: &'a Snapshot) -> Result<Vec<&'a CommitRecord>, CodeCtxError> {
    let shas = case_commits(case, snapshot);
    if shas.is_empty() {
        return Err(CodeCtxError::NoLinkedChange);
    }
    let mut commits: Vec<&CommitRecord> = shas.iter().filter_map(|s| snapshot.commit(s)).collect();
    if commits.is_empty() {
        return Err(CodeCtxError::CommitsUnavailable);
    }
    commits.sort_by(|a, b| a.committed_at.cmp(&b.committed_at).then_with(|| a.sha.cmp(&b.sha)));
    Ok(commits)
}

/// One [`FileChange`] per file touched by the case's fix. The pre-fix state
/// is the parent of the first fix commit; the post-fix state is the last.
pub fn diff_changed_files(case: &CaseArtifact, snapshot: &Snapshot) -> Result<Vec<FileChange>, CodeCtxError> {
    let commits = fix_commits(case, snapshot)?;
    let first = commits[0];
    let last = commits[commits.len() - 1];
    let parent = first.parents.first();

    let mut paths: Vec<&String> = commits.iter().flat_map(|c| c.files.iter()).collect();
    paths.sort();
    paths.dedup();

    let changes = paths
        .into_iter()
        .map(|path| {
            let (before, fetch_failed) = match parent {
                Some(p) => (snapshot.payload(p, path).map(decode), snapshot.fetch_failed(p, path)),
                None => (None, false),
            };
            let after = snapshot.payload(&last.sha, path).map(decode);
            let changed_line_ranges_before = match (&before, &after) {
                (Some(b), Some(a)) => changed_ranges(b, a),
                (Some(b), None) => {
                    // deleted by the fix
                    let n = b.lines().count();
                    if n == 0 {
                        Vec::new()
                    } else {
                        vec![LineRange { start: 1, end: n }]
                    }
                }
                (None, _) => Vec::new(),
            };
            FileChange {
                path: path.clone(),
                before,
                after,
                changed_line_ranges_before,
                fetch_failed,
            }
        })
        .collect();
    Ok(changes)
}
