use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::codectx::ContextLevel;
use crate::corpus::CaseId;

use super::{persist::list_case_dirs, DatasetCase, StoreError};

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    /// Reviewers required on every flaky case.
    pub min_reviewers_flaky: usize,
    /// Report an unequal flaky / non-flaky split as a violation.
    pub require_balanced: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            min_reviewers_flaky: 2,
            require_balanced: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateId,
    NonFlakyWithRootCause,
    FlakyWithoutRootCause,
    TooFewReviewers,
    FixWithoutCause,
    ContextInconsistent,
    CommentsUnordered,
    Unbalanced,
    OrphanDirectory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub case_id: Option<CaseId>,
    pub kind: ViolationKind,
    pub message: String,
}

fn violation(case: &DatasetCase, kind: ViolationKind, message: impl Into<String>) -> Violation {
    Violation {
        case_id: Some(case.id().clone()),
        kind,
        message: message.into(),
    }
}

pub(crate) fn case_violations(case: &DatasetCase, options: &ValidationOptions) -> Vec<Violation> {
    let l = &case.labeled;
    let mut out = Vec::new();
    if !l.flaky && !l.root_causes.is_empty() {
        out.push(violation(
            case,
            ViolationKind::NonFlakyWithRootCause,
            "non-flaky case carries root causes",
        ));
    }
    if l.flaky && l.root_causes.is_empty() {
        out.push(violation(
            case,
            ViolationKind::FlakyWithoutRootCause,
            "flaky case has no root cause",
        ));
    }
    if l.flaky && l.provenance.reviewer_ids.len() < options.min_reviewers_flaky {
        out.push(violation(
            case,
            ViolationKind::TooFewReviewers,
            format!(
                "flaky case has {} reviewer(s), {} required",
                l.provenance.reviewer_ids.len(),
                options.min_reviewers_flaky
            ),
        ));
    }
    if l.fix_patterns.len() > l.root_causes.len() {
        out.push(violation(
            case,
            ViolationKind::FixWithoutCause,
            "more fix patterns than root causes",
        ));
    }
    for level in ContextLevel::ALL {
        let ctx = case.context(level);
        if ctx.level != level || !ctx.is_consistent() {
            out.push(violation(
                case,
                ViolationKind::ContextInconsistent,
                format!("{level} context is inconsistent"),
            ));
        }
    }
    if !l.case.comments_ordered() {
        out.push(violation(
            case,
            ViolationKind::CommentsUnordered,
            "comments are not in time order",
        ));
    }
    out
}

/// Every invariant violation in `dataset`, in case-id order.
pub fn validate_dataset(dataset: &[DatasetCase], options: &ValidationOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<&CaseId, usize> = BTreeMap::new();
    for case in dataset {
        *seen.entry(case.id()).or_default() += 1;
        out.extend(case_violations(case, options));
    }
    for (id, n) in seen {
        if n > 1 {
            out.push(Violation {
                case_id: Some(id.clone()),
                kind: ViolationKind::DuplicateId,
                message: format!("id appears {n} times"),
            });
        }
    }
    let summary = summarize(dataset);
    if options.require_balanced && summary.flaky != summary.non_flaky {
        out.push(Violation {
            case_id: None,
            kind: ViolationKind::Unbalanced,
            message: format!("{} flaky vs {} non-flaky", summary.flaky, summary.non_flaky),
        });
    }
    out.sort_by(|a, b| a.case_id.cmp(&b.case_id).then(a.kind.cmp(&b.kind)));
    out
}

/// Directories that do not map to exactly one case per level.
pub fn validate_layout(root: &Path) -> Result<Vec<Violation>, StoreError> {
    let mut out = Vec::new();
    for (name, places) in list_case_dirs(root)? {
        for level in ContextLevel::ALL {
            let n = places.iter().filter(|(l, _, _)| *l == level).count();
            if n != 1 {
                out.push(Violation {
                    case_id: None,
                    kind: ViolationKind::OrphanDirectory,
                    message: format!("`{name}` has {n} {} directories", level.dir_name()),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub flaky: usize,
    pub non_flaky: usize,
    pub partial_present: usize,
    pub full_present: usize,
    pub flaky_partial_present: usize,
    pub flaky_full_present: usize,
    pub multi_label: usize,
}

pub fn summarize(dataset: &[DatasetCase]) -> DatasetSummary {
    let mut s = DatasetSummary {
        total: dataset.len(),
        ..Default::default()
    };
    for c in dataset {
        let flaky = c.labeled.flaky;
        if flaky {
            s.flaky += 1;
        } else {
            s.non_flaky += 1;
        }
        if c.partial.is_present() {
            s.partial_present += 1;
            s.flaky_partial_present += usize::from(flaky);
        }
        if c.full.is_present() {
            s.full_present += 1;
            s.flaky_full_present += usize::from(flaky);
        }
        if c.labeled.root_causes.len() > 1 {
            s.multi_label += 1;
        }
    }
    s
}
