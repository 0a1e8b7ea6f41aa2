//! On-disk snapshot format.
//!
//! `<dir>/snapshot.jsonl` holds a header line followed by one tagged record
//! per line; file contents live under `<dir>/payloads/<commit>/<path>` and
//! are indexed (with a SHA-256) by `payload` records.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{CaseArtifact, CommitRecord, FetchFailure, PayloadKey, RepositoryRef, Snapshot};

pub const SNAPSHOT_SCHEMA_VERSION: &str = "1";
pub const SNAPSHOT_FILE: &str = "snapshot.jsonl";
pub const PAYLOAD_DIR: &str = "payloads";

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot schema version `{found}` is not supported (expected `{SNAPSHOT_SCHEMA_VERSION}`)")]
    SchemaVersionMismatch { found: String },
    #[error("malformed snapshot record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("payload {commit}:{path} failed its integrity check")]
    PayloadCorrupt { commit: String, path: String },
    #[error("unsafe payload path `{0}`")]
    UnsafePath(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header {
        schema_version: String,
        created_at: DateTime<Utc>,
    },
    Repository(RepositoryRef),
    Artifact(CaseArtifact),
    Commit(CommitRecord),
    FetchFailure(FetchFailure),
    Payload {
        commit: String,
        path: String,
        sha256: String,
        len: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SnapshotError + '_ {
    move |source| SnapshotError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn payload_path(root: &Path, key: &PayloadKey) -> Result<PathBuf, SnapshotError> {
    let rel = Path::new(&key.path);
    let safe = rel.components().all(|c| matches!(c, Component::Normal(_)));
    if !safe || key.commit.is_empty() || key.commit.contains(['/', '\\', '.']) {
        return Err(SnapshotError::UnsafePath(format!("{}:{}", key.commit, key.path)));
    }
    Ok(root.join(PAYLOAD_DIR).join(&key.commit).join(rel))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `snapshot` under `dir`, replacing any previous snapshot there.
pub fn write_snapshot(snapshot: &Snapshot, dir: &Path) -> Result<(), SnapshotError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let payload_root = dir.join(PAYLOAD_DIR);
    if payload_root.exists() {
        fs::remove_dir_all(&payload_root).map_err(io_err(&payload_root))?;
    }

    let file_path = dir.join(SNAPSHOT_FILE);
    let file = fs::File::create(&file_path).map_err(io_err(&file_path))?;
    let mut out = BufWriter::new(file);
    let mut emit = |record: &Record| -> Result<(), SnapshotError> {
        let line = serde_json::to_string(record).expect("snapshot records serialise");
        writeln!(out, "{line}").map_err(io_err(&file_path))
    };

    emit(&Record::Header {
        schema_version: SNAPSHOT_SCHEMA_VERSION.to_string(),
        created_at: snapshot.created_at,
    })?;
    for r in &snapshot.repositories {
        emit(&Record::Repository(r.clone()))?;
    }
    for a in &snapshot.artifacts {
        emit(&Record::Artifact(a.clone()))?;
    }
    for c in &snapshot.commits {
        emit(&Record::Commit(c.clone()))?;
    }
    for f in &snapshot.fetch_failures {
        emit(&Record::FetchFailure(f.clone()))?;
    }
    for (key, bytes) in &snapshot.file_payloads {
        let target = payload_path(dir, key)?;
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&target, bytes).map_err(io_err(&target))?;
        emit(&Record::Payload {
            commit: key.commit.clone(),
            path: key.path.clone(),
            sha256: sha256_hex(bytes),
            len: bytes.len(),
        })?;
    }
    out.flush().map_err(io_err(&file_path))?;
    Ok(())
}

pub fn read_snapshot(dir: &Path) -> Result<Snapshot, SnapshotError> {
    let file_path = dir.join(SNAPSHOT_FILE);
    let file = fs::File::open(&file_path).map_err(io_err(&file_path))?;
    let reader = BufReader::new(file);

    let mut snapshot: Option<Snapshot> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(&file_path))?;
        if line.trim().is_empty() {
            continue;
        }
        // Check the version before attempting a full decode so that future
        // record shapes surface as a version error rather than a parse error.
        if snapshot.is_none() {
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| SnapshotError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;
            if let Some(found) = value.get("schema_version").and_then(|v| v.as_str()) {
                if found != SNAPSHOT_SCHEMA_VERSION {
                    return Err(SnapshotError::SchemaVersionMismatch {
                        found: found.to_string(),
                    });
                }
            }
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| SnapshotError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        match (record, snapshot.as_mut()) {
            (Record::Header { created_at, .. }, None) => {
                snapshot = Some(Snapshot::empty(created_at));
            }
            (_, None) | (Record::Header { .. }, Some(_)) => {
                return Err(SnapshotError::Malformed {
                    line: line_no,
                    reason: "header must appear exactly once, first".into(),
                })
            }
            (Record::Repository(r), Some(s)) => s.repositories.push(r),
            (Record::Artifact(a), Some(s)) => s.artifacts.push(a),
            (Record::Commit(c), Some(s)) => s.commits.push(c),
            (Record::FetchFailure(f), Some(s)) => s.fetch_failures.push(f),
            (
                Record::Payload {
                    commit, path, sha256, ..
                },
                Some(s),
            ) => {
                let key = PayloadKey::new(commit, path);
                let target = payload_path(dir, &key)?;
                let bytes = fs::read(&target).map_err(io_err(&target))?;
                if sha256_hex(&bytes) != sha256 {
                    return Err(SnapshotError::PayloadCorrupt {
                        commit: key.commit,
                        path: key.path,
                    });
                }
                s.file_payloads.insert(key, bytes);
            }
        }
    }
    snapshot.ok_or(SnapshotError::Malformed {
        line: 0,
        reason: "empty snapshot file".into(),
    })
}
