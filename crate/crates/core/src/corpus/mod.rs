//! Ingestion of issue reports, pull requests and fix commits into a
//! canonical offline snapshot.

mod fetch;
mod link;
mod snapshot;
mod types;

pub use fetch::{fetch_payloads, ingest, EventLinks, FetchConfig, FetchError, HostingClient, DEFAULT_TOKEN_ENV};
pub use link::{
    build_cases, case_commits, closing_references, link_case, scan_references, LinkOutcome, LinkWarning, Reference,
};
pub use snapshot::{read_snapshot, write_snapshot, SnapshotError, PAYLOAD_DIR, SNAPSHOT_FILE, SNAPSHOT_SCHEMA_VERSION};
pub use types::{
    ArtifactKind, ArtifactState, CaseArtifact, CaseId, CaseIdParseError, Comment, CommitRecord, FetchFailure,
    PayloadKey, RepositoryRef, Snapshot,
};
