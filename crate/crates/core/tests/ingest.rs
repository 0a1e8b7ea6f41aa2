use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use base64::Engine;
use chrono::{TimeZone, Utc};
use qflake_core::corpus::{
    ingest, read_snapshot, write_snapshot, ArtifactKind, FetchConfig, FetchError, HostingClient, RepositoryRef,
};
use serde_json::{json, Value};

const SHA_PARENT: &str = "0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a";
const SHA_FIX: &str = "1b1b1b1b1b1b1b1b1b1b1b1b1b1b1b1b1b1b1b1b";
const SHA_DOCS: &str = "2c2c2c2c2c2c2c2c2c2c2c2c2c2c2c2c2c2c2c2c";
const SHA_REF: &str = "3d3d3d3d3d3d3d3d3d3d3d3d3d3d3d3d3d3d3d3d";

const BEFORE: &str = "def test_x():\n    qc = random_circuit(2, 3)\n";
const AFTER: &str = "def test_x():\n    qc = random_circuit(2, 3, seed=4200)\n";

#[derive(Clone, Default)]
struct Mock {
    hits: Arc<AtomicUsize>,
    /// Requests answered with 429 before serving normally.
    throttle: Arc<AtomicUsize>,
    require_token: bool,
}

fn issue(number: u64, title: &str, body: &str, pr: bool) -> Value {
    let mut v = json!({"number": number, "title": title, "body": body, "state": "closed"});
    if pr {
        v["pull_request"] = json!({"url": "x"});
    }
    v
}

fn comment(user: &str, at: &str, body: &str) -> Value {
    json!({"user": {"login": user}, "created_at": at, "body": body})
}

fn commit(sha: &str, parent: &str, at: &str, files: &[&str]) -> Value {
    json!({
        "sha": sha,
        "parents": [{"sha": parent}],
        "commit": {"committer": {"date": at}},
        "files": files.iter().map(|f| json!({"filename": f})).collect::<Vec<_>>(),
    })
}

fn content(text: &str) -> Value {
    json!({"encoding": "base64", "content": base64::engine::general_purpose::STANDARD.encode(text)})
}

async fn route(State(mock): State<Mock>, headers: HeaderMap, uri: Uri) -> Response {
    mock.hits.fetch_add(1, Ordering::SeqCst);
    if mock.require_token && headers.get("authorization").is_none_or(|h| h != "Bearer sekrit") {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    if mock
        .throttle
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (StatusCode::TOO_MANY_REQUESTS, [("retry-after", "0")]).into_response();
    }
    let path = uri.path().trim_start_matches("/repos/Qiskit/qiskit");
    let query = uri.query().unwrap_or("");
    let body = match path {
        "/issues" => {
            assert!(query.contains("state=closed"));
            json!([
                issue(4, "Seed random_circuit in test", "Fixes #1", true),
                issue(
                    1,
                    "test_append_circuit fails intermittently",
                    "Seen twice on CI.",
                    false
                ),
                issue(2, "Docs build flaky", "sphinx fails sometimes", false),
                issue(5, "Bump tox", "", true),
                issue(3, "Question about transpile", "How do I ...", false),
                json!({"number": 6, "title": "still open", "body": "", "state": "open"}),
            ])
        }
        "/issues/1/comments" => json!([
            comment("dev-b", "2021-01-03T10:00:00Z", "still failing"),
            comment("dev-a", "2021-01-02T09:00:00Z", "cannot reproduce locally"),
            comment("ci-bot[bot]", "2021-01-02T12:00:00Z", "build log attached"),
        ]),
        "/issues/2/comments" => json!([comment("dev-a", "2021-02-01T00:00:00Z", &format!("fixed by {SHA_REF}"))]),
        p if p.ends_with("/comments") => json!([]),
        "/pulls/4/commits" => json!([{"sha": SHA_FIX}]),
        "/pulls/5/commits" => json!([{"sha": SHA_DOCS}]),
        "/issues/2/timeline" => json!([{"event": "referenced", "commit_id": SHA_DOCS}]),
        p if p.ends_with("/timeline") => return StatusCode::NOT_FOUND.into_response(),
        p if p == format!("/commits/{SHA_FIX}") => {
            commit(SHA_FIX, SHA_PARENT, "2021-01-04T00:00:00Z", &["test/test_circuit.py"])
        }
        p if p == format!("/commits/{SHA_DOCS}") => commit(SHA_DOCS, SHA_PARENT, "2021-02-02T00:00:00Z", &["tox.ini"]),
        p if p == format!("/commits/{SHA_REF}") => return StatusCode::NOT_FOUND.into_response(),
        "/contents/test/test_circuit.py" if query == format!("ref={SHA_PARENT}") => content(BEFORE),
        "/contents/test/test_circuit.py" if query == format!("ref={SHA_FIX}") => content(AFTER),
        "/contents/tox.ini" if query == format!("ref={SHA_PARENT}") => content("[tox]\n"),
        "/contents/tox.ini" => return StatusCode::INTERNAL_SERVER_ERROR.into_response(),
        other => panic!("unexpected request {other}?{query}"),
    };
    Json(body).into_response()
}

async fn serve(mock: Mock) -> String {
    let app = Router::new().fallback(route).with_state(mock);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn repo() -> RepositoryRef {
    RepositoryRef::new("Qiskit", "qiskit")
}

fn config(base_url: String) -> FetchConfig {
    FetchConfig {
        base_url,
        exclude_authors: vec![r"\[bot\]$".into()],
        ..Default::default()
    }
}

#[tokio::test]
async fn ingest_collects_closed_artifacts_links_and_payloads() {
    let mock = Mock::default();
    let base = serve(mock.clone()).await;
    let client = HostingClient::new(config(base)).unwrap();
    let at = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let snap = ingest(&client, &[repo()], at).await.unwrap();

    let order: Vec<(ArtifactKind, u64)> = snap.artifacts.iter().map(|a| (a.kind, a.number)).collect();
    assert_eq!(
        order,
        [
            (ArtifactKind::Issue, 1),
            (ArtifactKind::Issue, 2),
            (ArtifactKind::Issue, 3),
            (ArtifactKind::PullRequest, 4),
            (ArtifactKind::PullRequest, 5),
        ]
    );

    let one = &snap.artifacts[0];
    let authors: Vec<&str> = one.comments.iter().map(|c| c.author.as_str()).collect();
    assert_eq!(authors, ["dev-a", "dev-b"]);
    assert!(snap.artifacts.iter().all(|a| a.comments_ordered()));
    assert_eq!(one.linked_prs, ["Qiskit/qiskit#4".parse().unwrap()]);

    // event link kept, unresolvable textual sha dropped
    assert_eq!(snap.artifacts[1].linked_commits, [SHA_DOCS]);
    assert_eq!(snap.commits.len(), 2);

    let before = snap.payload(SHA_PARENT, "test/test_circuit.py").unwrap();
    assert_eq!(before, BEFORE.as_bytes());
    assert_eq!(snap.payload(SHA_FIX, "test/test_circuit.py").unwrap(), AFTER.as_bytes());
    assert!(snap.fetch_failed(SHA_DOCS, "tox.ini"));

    // a frozen API yields the same snapshot, which survives disk
    let again = ingest(&client, &[repo()], at).await.unwrap();
    assert_eq!(again, snap);
    let dir = tempfile::tempdir().unwrap();
    write_snapshot(&snap, dir.path()).unwrap();
    assert_eq!(read_snapshot(dir.path()).unwrap(), snap);
}

#[tokio::test]
async fn auth_and_rate_limits() {
    let mock = Mock {
        require_token: true,
        ..Default::default()
    };
    let base = serve(mock.clone()).await;
    let client = HostingClient::new(config(base.clone())).unwrap();
    let err = client.fetch_closed_artifacts(&repo()).await.unwrap_err();
    assert!(matches!(err, FetchError::Auth { .. }));

    let authed = HostingClient::new(FetchConfig {
        token: Some("sekrit".into()),
        ..config(base)
    })
    .unwrap();
    mock.throttle.store(2, Ordering::SeqCst);
    let before = mock.hits.load(Ordering::SeqCst);
    let artifacts = authed.fetch_closed_artifacts(&repo()).await.unwrap();
    assert_eq!(artifacts.len(), 5);
    // two throttled attempts were retried
    assert!(mock.hits.load(Ordering::SeqCst) - before >= 2 + 1 + 5 + 2);

    mock.throttle.store(10, Ordering::SeqCst);
    let err = authed.fetch_closed_artifacts(&repo()).await.unwrap_err();
    assert!(matches!(err, FetchError::RateLimited { .. }));
}
