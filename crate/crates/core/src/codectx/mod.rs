//! Recovery of pre-fix code for a case, either as the enclosing functions of
//! the changed lines (partial) or as complete file listings (full).

mod diff;
mod python;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{CaseArtifact, Snapshot};

pub use diff::{changed_ranges, diff_changed_files, fix_commits, FileChange, LineRange};
pub use python::{function_spans, innermost_at, FunctionSpan, ParseFailure};

/// Unit name used for whole-file listings.
pub const FILE_UNIT: &str = "<file>";
pub const DEFAULT_CHAR_BUDGET: usize = 60_000;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodeCtxError {
    #[error("case has no linked fix commits or pull requests")]
    NoLinkedChange,
    #[error("linked fix commits are not present in the snapshot")]
    CommitsUnavailable,
    #[error("`{0}` is not Python source")]
    NonPython(String),
    #[error(transparent)]
    Parse(#[from] ParseFailure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLevel {
    Partial,
    Full,
}

impl ContextLevel {
    pub const ALL: [ContextLevel; 2] = [ContextLevel::Partial, ContextLevel::Full];

    /// Directory name in the dataset layout.
    pub fn dir_name(self) -> &'static str {
        match self {
            ContextLevel::Partial => "method",
            ContextLevel::Full => "full",
        }
    }
}

impl fmt::Display for ContextLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextLevel::Partial => "partial",
            ContextLevel::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextStatus {
    Present,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingReason {
    NonPython,
    NoEnclosingFunction,
    NoCodeChange,
    FetchFailed,
}

impl fmt::Display for MissingReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingReason::NonPython => "non_python",
            MissingReason::NoEnclosingFunction => "no_enclosing_function",
            MissingReason::NoCodeChange => "no_code_change",
            MissingReason::FetchFailed => "fetch_failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeUnit {
    pub path: String,
    pub unit_name: String,
    pub text: String,
}

/// Pre-fix code attached to a case at one level, or an explicit marker that
/// none could be recovered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeContext {
    pub level: ContextLevel,
    pub units: Vec<CodeUnit>,
    pub status: ContextStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_reason: Option<MissingReason>,
    #[serde(default)]
    pub truncated: bool,
}

impl CodeContext {
    pub fn present(level: ContextLevel, units: Vec<CodeUnit>) -> Self {
        debug_assert!(!units.is_empty());
        Self {
            level,
            units,
            status: ContextStatus::Present,
            missing_reason: None,
            truncated: false,
        }
    }

    pub fn missing(level: ContextLevel, reason: MissingReason) -> Self {
        Self {
            level,
            units: Vec::new(),
            status: ContextStatus::Missing,
            missing_reason: Some(reason),
            truncated: false,
        }
    }

    pub fn is_present(&self) -> bool {
        self.status == ContextStatus::Present
    }

    /// `status == present ⇔ units non-empty`, full ⇒ every unit is `<file>`.
    pub fn is_consistent(&self) -> bool {
        let present_ok = self.is_present() == !self.units.is_empty();
        let reason_ok = self.is_present() == self.missing_reason.is_none();
        let full_ok = self.level == ContextLevel::Partial || self.units.iter().all(|u| u.unit_name == FILE_UNIT);
        present_ok && reason_ok && full_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Python,
    /// Source code in another programming language (Q#, C#, C++ ...).
    OtherLanguage,
    /// Configuration, documentation, requirement lists and the like.
    NonCode,
}

impl FileKind {
    pub fn of(path: &str) -> FileKind {
        let ext = path
            .rsplit_once('.')
            .map(|(_, e)| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "py" | "pyi" | "pyw" => FileKind::Python,
            "qs" | "cs" | "fs" | "c" | "cc" | "cpp" | "cxx" | "h" | "hpp" | "rs" | "go" | "java" | "js" | "ts"
            | "jl" | "rb" | "swift" | "kt" | "scala" | "pyx" | "cu" => FileKind::OtherLanguage,
            _ => FileKind::NonCode,
        }
    }
}

/// A function extracted from the pre-fix source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodUnit {
    pub unit_name: String,
    pub text: String,
    pub start_line: usize,
    pub end_line: usize,
}

/// Innermost enclosing functions of the changed `before` lines, each at most
/// once, in file order.
pub fn extract_method_context(change: &FileChange) -> Result<Vec<MethodUnit>, CodeCtxError> {
    match FileKind::of(&change.path) {
        FileKind::OtherLanguage => return Err(CodeCtxError::NonPython(change.path.clone())),
        FileKind::NonCode => return Ok(Vec::new()),
        FileKind::Python => {}
    }
    let Some(before) = change.before.as_deref() else {
        return Ok(Vec::new());
    };
    let spans = function_spans(before)?;
    let mut picked: Vec<&FunctionSpan> = Vec::new();
    for line in change.changed_line_ranges_before.iter().flat_map(|r| r.lines()) {
        if let Some(span) = innermost_at(&spans, line) {
            if !picked.iter().any(|p| std::ptr::eq(*p, span)) {
                picked.push(span);
            }
        }
    }
    picked.sort_by_key(|s| s.start_byte);
    Ok(picked
        .into_iter()
        .map(|s| MethodUnit {
            unit_name: s.name.clone(),
            text: before[s.start_byte..s.end_byte].to_string(),
            start_line: s.start_line,
            end_line: s.end_line,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextOptions {
    /// Total characters of code kept per context.
    pub char_budget: usize,
}

impl Default for ContextOptions {
    fn default() -> Self {
        Self {
            char_budget: DEFAULT_CHAR_BUDGET,
        }
    }
}

fn truncation_marker(dropped: usize) -> String {
    format!("\n# [... truncated {dropped} characters to fit the context budget ...]\n")
}

/// Caps the total characters across `units`; returns whether anything was cut.
fn apply_budget(units: &mut [CodeUnit], budget: usize) -> bool {
    let mut used = 0usize;
    let mut truncated = false;
    for unit in units.iter_mut() {
        let len = unit.text.chars().count();
        if used + len <= budget {
            used += len;
            continue;
        }
        let keep = budget.saturating_sub(used);
        let cut: String = unit.text.chars().take(keep).collect();
        unit.text = format!("{cut}{}", truncation_marker(len - keep));
        used = budget;
        truncated = true;
    }
    truncated
}

enum FileOutcome {
    Units(Vec<CodeUnit>),
    Unchanged,
    Added,
    FetchFailed,
    NonPython,
    NoFunction,
}

/// Builds the context for `case` at `level`. Never fails: when nothing can be
/// extracted the result is a `missing` context carrying the most specific
/// reason.
pub fn build_code_context(
    case: &CaseArtifact,
    level: ContextLevel,
    snapshot: &Snapshot,
    options: &ContextOptions,
) -> CodeContext {
    let changes = match diff_changed_files(case, snapshot) {
        Ok(c) => c,
        Err(CodeCtxError::CommitsUnavailable) => return CodeContext::missing(level, MissingReason::FetchFailed),
        Err(_) => return CodeContext::missing(level, MissingReason::NoCodeChange),
    };
    build_from_changes(&changes, level, options)
}

pub fn build_from_changes(changes: &[FileChange], level: ContextLevel, options: &ContextOptions) -> CodeContext {
    let outcomes: Vec<FileOutcome> = changes
        .iter()
        .map(|change| {
            if change.fetch_failed {
                return FileOutcome::FetchFailed;
            }
            let Some(before) = &change.before else {
                return FileOutcome::Added;
            };
            match level {
                ContextLevel::Full => FileOutcome::Units(vec![CodeUnit {
                    path: change.path.clone(),
                    unit_name: FILE_UNIT.to_string(),
                    text: before.clone(),
                }]),
                ContextLevel::Partial => {
                    if change.changed_line_ranges_before.is_empty() {
                        return FileOutcome::Unchanged;
                    }
                    match extract_method_context(change) {
                        Ok(units) if units.is_empty() => FileOutcome::NoFunction,
                        Ok(units) => FileOutcome::Units(
                            units
                                .into_iter()
                                .map(|u| CodeUnit {
                                    path: change.path.clone(),
                                    unit_name: u.unit_name,
                                    text: u.text,
                                })
                                .collect(),
                        ),
                        Err(CodeCtxError::NonPython(_)) => FileOutcome::NonPython,
                        Err(_) => FileOutcome::NoFunction,
                    }
                }
            }
        })
        .collect();

    let mut units: Vec<CodeUnit> = Vec::new();
    for o in &outcomes {
        if let FileOutcome::Units(u) = o {
            units.extend(u.iter().cloned());
        }
    }
    if !units.is_empty() {
        let truncated = apply_budget(&mut units, options.char_budget);
        let mut ctx = CodeContext::present(level, units);
        ctx.truncated = truncated;
        return ctx;
    }
    let has = |pred: fn(&FileOutcome) -> bool| outcomes.iter().any(pred);
    let reason = if has(|o| matches!(o, FileOutcome::NoFunction)) {
        MissingReason::NoEnclosingFunction
    } else if has(|o| matches!(o, FileOutcome::NonPython)) {
        MissingReason::NonPython
    } else if has(|o| matches!(o, FileOutcome::FetchFailed)) {
        MissingReason::FetchFailed
    } else {
        MissingReason::NoCodeChange
    };
    CodeContext::missing(level, reason)
}
