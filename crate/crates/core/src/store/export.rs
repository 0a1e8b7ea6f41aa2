use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::codectx::{diff_changed_files, FILE_UNIT};
use crate::corpus::Snapshot;
use crate::promptkit::{build_report_text, ReportLevel};

use super::{DatasetCase, StoreError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub cases: usize,
    pub files: usize,
}

/// Repository path made relative and free of `..`.
fn safe_rel(path: &str) -> PathBuf {
    Path::new(path)
        .components()
        .filter_map(|c| match c {
            Component::Normal(p) => Some(p.to_owned()),
            _ => None,
        })
        .collect()
}

fn put(path: &Path, bytes: &[u8], summary: &mut ExportSummary) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| StoreError::io(path, e))?;
    summary.files += 1;
    Ok(())
}

/// Flat publication archive: one directory per case with the full report,
/// labels, pre-fix files, extracted methods and (given a snapshot) post-fix
/// files, plus an `index.jsonl`.
pub fn export_flat(
    dataset: &[DatasetCase],
    snapshot: Option<&Snapshot>,
    out: &Path,
) -> Result<ExportSummary, StoreError> {
    let mut summary = ExportSummary::default();
    let mut index = String::new();
    for case in dataset {
        let l = &case.labeled;
        let dir = out
            .join(if l.flaky { "flaky" } else { "non-flaky" })
            .join(l.case.id.dir_name());
        if let Ok(report) = build_report_text(&l.case, ReportLevel::Full) {
            put(&dir.join("report.txt"), report.as_bytes(), &mut summary)?;
        }
        let labels = json!({
            "id": l.case.id,
            "flaky": l.flaky,
            "root_causes": l.root_causes,
            "fix_patterns": l.fix_patterns,
            "provenance": l.provenance,
            "partial_context": case.partial.status,
            "full_context": case.full.status,
        });
        let mut label_bytes = serde_json::to_vec_pretty(&labels).expect("labels serialize");
        label_bytes.push(b'\n');
        put(&dir.join("labels.json"), &label_bytes, &mut summary)?;
        index.push_str(&serde_json::to_string(&labels).expect("labels serialize"));
        index.push('\n');

        for unit in case.full.units.iter().filter(|u| u.unit_name == FILE_UNIT) {
            put(
                &dir.join("before").join(safe_rel(&unit.path)),
                unit.text.as_bytes(),
                &mut summary,
            )?;
        }
        for (i, unit) in case.partial.units.iter().enumerate() {
            let name = format!("{:02}-{}.txt", i + 1, unit.unit_name);
            put(&dir.join("method").join(name), unit.text.as_bytes(), &mut summary)?;
        }
        if let Some(snap) = snapshot {
            if let Ok(changes) = diff_changed_files(&l.case, snap) {
                for ch in changes {
                    if let Some(after) = &ch.after {
                        put(
                            &dir.join("after").join(safe_rel(&ch.path)),
                            after.as_bytes(),
                            &mut summary,
                        )?;
                    }
                }
            }
        }
        summary.cases += 1;
    }
    put(&out.join("index.jsonl"), index.as_bytes(), &mut summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_cannot_escape() {
        assert_eq!(safe_rel("../../etc/passwd"), PathBuf::from("etc/passwd"));
        assert_eq!(safe_rel("/abs/x.py"), PathBuf::from("abs/x.py"));
    }
}
