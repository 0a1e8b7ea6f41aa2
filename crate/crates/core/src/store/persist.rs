use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codectx::{CodeContext, ContextLevel, FILE_UNIT};
use crate::corpus::{CaseArtifact, CaseId};
use crate::promptkit::{build_report_text, ReportLevel};
use crate::taxonomy::{FixPattern, RootCause};

use super::{validate::case_violations, DatasetCase, LabeledCase, Provenance, StoreError, ValidationOptions};

pub const LABEL_SCHEMA_VERSION: &str = "1";

const LABEL_FILE: &str = "label.toml";
const CASE_FILE: &str = "case.json";
const CONTEXT_FILE: &str = "context.json";
const CODE_DIR: &str = "code";

fn class_dir(flaky: bool) -> &'static str {
    if flaky {
        "flaky"
    } else {
        "non-flaky"
    }
}

pub fn case_dir(root: &Path, level: ContextLevel, flaky: bool, id: &CaseId) -> PathBuf {
    root.join(level.dir_name()).join(class_dir(flaky)).join(id.dir_name())
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    schema_version: String,
    id: CaseId,
    flaky: bool,
    root_causes: Vec<RootCause>,
    #[serde(default)]
    fix_patterns: Vec<FixPattern>,
    provenance: Provenance,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    fs::write(path, bytes).map_err(|e| StoreError::io(path, e))
}

fn code_file_name(i: usize, path: &str, unit: &str) -> String {
    let flat: String = path
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if unit == FILE_UNIT {
        format!("{:02}-{flat}", i + 1)
    } else {
        format!("{:02}-{flat}--{unit}.txt", i + 1)
    }
}

fn write_level(
    dir: &Path,
    labeled: &LabeledCase,
    label_toml: &str,
    case_json: &[u8],
    ctx: &CodeContext,
) -> Result<(), StoreError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    }
    let code_dir = dir.join(CODE_DIR);
    fs::create_dir_all(&code_dir).map_err(|e| StoreError::io(&code_dir, e))?;
    write(&dir.join(LABEL_FILE), label_toml.as_bytes())?;
    write(&dir.join(CASE_FILE), case_json)?;
    for (level, name) in [
        (ReportLevel::Partial, "report_partial.txt"),
        (ReportLevel::Full, "report_full.txt"),
    ] {
        if let Ok(text) = build_report_text(&labeled.case, level) {
            write(&dir.join(name), text.as_bytes())?;
        }
    }
    let mut ctx_json = serde_json::to_vec_pretty(ctx).expect("context serializes");
    ctx_json.push(b'\n');
    write(&dir.join(CONTEXT_FILE), &ctx_json)?;
    if let Some(reason) = ctx.missing_reason {
        write(&code_dir.join("MISSING"), format!("{reason}\n").as_bytes())?;
    }
    for (i, unit) in ctx.units.iter().enumerate() {
        write(
            &code_dir.join(code_file_name(i, &unit.path, &unit.unit_name)),
            unit.text.as_bytes(),
        )?;
    }
    Ok(())
}

/// Writes one case under both level roots. Any previous directory for the
/// case is replaced, so re-persisting yields a byte-identical tree.
pub fn persist_case(case: &DatasetCase, root: &Path, options: &ValidationOptions) -> Result<(), StoreError> {
    if let Some(v) = case_violations(case, options).into_iter().next() {
        return Err(StoreError::Validation {
            case: case.id().clone(),
            reason: v.message,
        });
    }
    let l = &case.labeled;
    let label = LabelFile {
        schema_version: LABEL_SCHEMA_VERSION.to_string(),
        id: l.case.id.clone(),
        flaky: l.flaky,
        root_causes: l.root_causes.clone(),
        fix_patterns: l.fix_patterns.clone(),
        provenance: l.provenance.clone(),
    };
    let label_toml = toml::to_string(&label).map_err(|e| StoreError::Validation {
        case: l.case.id.clone(),
        reason: e.to_string(),
    })?;
    let mut case_json = serde_json::to_vec_pretty(&l.case).expect("case serializes");
    case_json.push(b'\n');
    for level in ContextLevel::ALL {
        // a stale copy under the other class would survive a label flip
        let stale = case_dir(root, level, !l.flaky, l.id());
        if stale.exists() {
            fs::remove_dir_all(&stale).map_err(|e| StoreError::io(&stale, e))?;
        }
        write_level(
            &case_dir(root, level, l.flaky, l.id()),
            l,
            &label_toml,
            &case_json,
            case.context(level),
        )?;
    }
    Ok(())
}

pub fn persist_dataset(cases: &[DatasetCase], root: &Path, options: &ValidationOptions) -> Result<(), StoreError> {
    for case in cases {
        persist_case(case, root, options)?;
    }
    Ok(())
}

fn read_string(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(|e| StoreError::io(path, e))
}

fn read_label(path: &Path) -> Result<LabelFile, StoreError> {
    let text = read_string(path)?;
    let value: toml::Value = toml::from_str(&text).map_err(|e| StoreError::schema(path, e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_str()) {
        Some(LABEL_SCHEMA_VERSION) => {}
        Some(other) => {
            return Err(StoreError::schema(
                path,
                format!("unsupported schema version `{other}`"),
            ))
        }
        None => return Err(StoreError::schema(path, "missing schema_version")),
    }
    toml::from_str(&text).map_err(|e| StoreError::schema(path, e.to_string()))
}

fn read_context(path: &Path, level: ContextLevel) -> Result<CodeContext, StoreError> {
    let ctx: CodeContext =
        serde_json::from_str(&read_string(path)?).map_err(|e| StoreError::schema(path, e.to_string()))?;
    if ctx.level != level {
        return Err(StoreError::schema(
            path,
            format!("context level {} stored under {level}", ctx.level),
        ));
    }
    Ok(ctx)
}

/// (level, flaky, path) of one case directory.
pub(crate) type CasePlace = (ContextLevel, bool, PathBuf);

/// Case directories present under `<root>/<level>/<class>/`, keyed by
/// directory name.
pub(crate) fn list_case_dirs(root: &Path) -> Result<BTreeMap<String, Vec<CasePlace>>, StoreError> {
    let mut found: BTreeMap<String, Vec<CasePlace>> = BTreeMap::new();
    for level in ContextLevel::ALL {
        for flaky in [true, false] {
            let dir = root.join(level.dir_name()).join(class_dir(flaky));
            if !dir.exists() {
                continue;
            }
            for entry in fs::read_dir(&dir).map_err(|e| StoreError::io(&dir, e))? {
                let entry = entry.map_err(|e| StoreError::io(&dir, e))?;
                if entry.path().is_dir() {
                    let name = entry.file_name().to_string_lossy().into_owned();
                    found.entry(name).or_default().push((level, flaky, entry.path()));
                }
            }
        }
    }
    Ok(found)
}

/// Inverse of [`persist_dataset`]; cases come back sorted by id.
pub fn load_dataset(root: &Path) -> Result<Vec<DatasetCase>, StoreError> {
    if !root.is_dir() {
        return Err(StoreError::schema(root, "dataset root does not exist"));
    }
    let mut out = Vec::new();
    for (name, places) in list_case_dirs(root)? {
        let find = |level: ContextLevel| -> Result<&(ContextLevel, bool, PathBuf), StoreError> {
            let mut hits = places.iter().filter(|(l, _, _)| *l == level);
            let first = hits.next().ok_or_else(|| {
                StoreError::schema(
                    root.join(level.dir_name()),
                    format!("case `{name}` has no {} directory", level.dir_name()),
                )
            })?;
            if hits.next().is_some() {
                return Err(StoreError::schema(
                    &first.2,
                    "case stored under both flaky and non-flaky",
                ));
            }
            Ok(first)
        };
        let (_, flaky_dir, method_dir) = find(ContextLevel::Partial)?;
        let (_, _, full_dir) = find(ContextLevel::Full)?;

        let label_path = method_dir.join(LABEL_FILE);
        let label = read_label(&label_path)?;
        if read_string(&full_dir.join(LABEL_FILE))? != read_string(&label_path)? {
            return Err(StoreError::schema(
                full_dir.join(LABEL_FILE),
                "label differs from the method copy",
            ));
        }
        if label.flaky != *flaky_dir {
            return Err(StoreError::schema(
                &label_path,
                "label disagrees with its flaky/non-flaky directory",
            ));
        }
        let case_path = method_dir.join(CASE_FILE);
        let case: CaseArtifact = serde_json::from_str(&read_string(&case_path)?)
            .map_err(|e| StoreError::schema(&case_path, e.to_string()))?;
        if case.id != label.id {
            return Err(StoreError::schema(
                &case_path,
                format!("case id {} but label id {}", case.id, label.id),
            ));
        }
        if case.id.dir_name() != name {
            return Err(StoreError::schema(
                method_dir,
                format!("directory name does not match id {}", case.id),
            ));
        }
        out.push(DatasetCase {
            labeled: LabeledCase {
                case,
                flaky: label.flaky,
                root_causes: label.root_causes,
                fix_patterns: label.fix_patterns,
                provenance: label.provenance,
            },
            partial: read_context(&method_dir.join(CONTEXT_FILE), ContextLevel::Partial)?,
            full: read_context(&full_dir.join(CONTEXT_FILE), ContextLevel::Full)?,
        });
    }
    out.sort_by(|a, b| a.id().cmp(b.id()));
    Ok(out)
}
