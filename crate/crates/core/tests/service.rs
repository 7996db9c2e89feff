mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use gs_core::ingest::MAX_UPLOAD_BYTES;
use gs_core::lsp_bridge::{LspPool, LspServerEntry, ServerConfig};
use gs_core::service::tools::ToolRegistry;
use gs_core::service::wire::{UploadAccepted, WireResponse};
use gs_core::service::{router, AppState, ServiceConfig};
use gs_core::{Engine, SearchQuery};
use http_body_util::BodyExt;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(engine: Arc<Engine>, token: Option<&str>) -> Router {
    let config = ServiceConfig { bearer_token: token.map(str::to_string), ..Default::default() };
    router(AppState::new(engine.clone(), ToolRegistry::standard(engine, None), &config))
}

async fn send(app: &Router, method: &str, uri: &str, body: impl Into<Body>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut request = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    if let Some(t) = token {
        request = request.header("authorization", format!("Bearer {t}"));
    }
    let response = app.clone().oneshot(request.body(body.into()).unwrap()).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    send(app, "POST", uri, serde_json::to_vec(&body).unwrap(), None).await
}

fn seeded_engine(seed: u64, docs: usize) -> (tempfile::TempDir, Arc<Engine>) {
    let (dir, engine) = common::temp_engine();
    let mut rng = StdRng::seed_from_u64(seed);
    for i in 0..docs {
        common::ingest_text(&engine, &format!("spec-{i}.txt"), &common::technical_document(&mut rng, 3, 4000));
    }
    common::ingest_text(&engine, "ts_138331.txt", common::FIXTURE_38331);
    (dir, Arc::new(engine))
}

const QUERY_WORDS: &[&str] = &[
    "synchronization", "signal", "block", "timing", "recovery", "beam", "the", "of", "SSB", "38.331",
    "measurement", "paging", "nothing", "configuration", "Find", "in",
];

#[tokio::test(flavor = "multi_thread")]
async fn http_search_equals_the_library_call() {
    let (_dir, engine) = seeded_engine(3, 8);
    let app = app(engine.clone(), None);
    let mut rng = StdRng::seed_from_u64(17);
    for _ in 0..50 {
        let words: Vec<&str> = (0..rng.random_range(1..5)).map(|_| *QUERY_WORDS.choose(&mut rng).unwrap()).collect();
        let q = words.join(" ");
        let k = rng.random_range(1..8);
        let (status, body) = post_json(&app, "/search", json!({"query": q, "max_results": k})).await;
        assert_eq!(status, StatusCode::OK, "{q}");
        let got: WireResponse = serde_json::from_slice(&body).unwrap();
        let want = WireResponse::from(engine.search(&SearchQuery::new(&q).with_max_results(k)).unwrap());
        assert_eq!(got, want, "{q}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn example_query_finds_the_bundled_specification() {
    let (_dir, engine) = seeded_engine(4, 3);
    let app = app(engine.clone(), None);
    let (status, body) = post_json(&app, "/search", json!({"query": "Find synchronization signals in 38.331"})).await;
    assert_eq!(status, StatusCode::OK);
    let response: WireResponse = serde_json::from_slice(&body).unwrap();
    let top = response.results.first().expect("at least one result");
    assert_eq!(top.filename, "ts_138331.txt");
    let terms: Vec<String> = engine
        .analyzer()
        .analyze("Find synchronization signals in 38.331")
        .into_iter()
        .map(|t| t.text)
        .collect();
    assert!(top.snippets.iter().all(|s| s.text.chars().count() <= 200));
    assert!(top.snippets.iter().any(|s| {
        engine.analyzer().analyze(&s.text).iter().any(|t| terms.contains(&t.text))
    }));
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_requests_get_client_errors() {
    let (_dir, engine) = seeded_engine(5, 1);
    let app = app(engine, None);
    for body in [json!({"query": ""}), json!({"query": "   "}), json!({"max_results": 3}), json!({"query": "x", "max_results": 0}), json!({"query": 5})] {
        assert_eq!(post_json(&app, "/search", body.clone()).await.0, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(send(&app, "POST", "/search", "not json", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "POST", "/documents", "text", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "POST", "/documents?filename=a.txt&markdown=maybe", "text", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "GET", "/documents/ffffffffffffffffffffffffffffffff", Body::empty(), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, "DELETE", "/documents/nope", Body::empty(), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post_json(&app, "/tools/nope", json!({})).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post_json(&app, "/tools/search_internal", json!({"q": "x"})).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn oversize_upload_is_rejected() {
    let (_dir, engine) = common::temp_engine();
    let engine = Arc::new(engine);
    let app = app(engine.clone(), None);
    let body = vec![b'a'; MAX_UPLOAD_BYTES + 1];
    let (status, _) = send(&app, "POST", "/documents?filename=big.txt", body, None).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(engine.list_documents().is_empty());
}

async fn wait_for_status(app: &Router, doc_id: &str, want: &str) -> Value {
    for _ in 0..200 {
        let (status, body) = send(app, "GET", &format!("/documents/{doc_id}"), Body::empty(), None).await;
        assert_eq!(status, StatusCode::OK);
        let doc: Value = serde_json::from_slice(&body).unwrap();
        if doc["status"] == want {
            return doc;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("document {doc_id} never reached {want}");
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_is_accepted_then_indexed_and_replaced() {
    let (_dir, engine) = common::temp_engine();
    let engine = Arc::new(engine);
    let app = app(engine.clone(), None);

    let (status, body) = send(&app, "POST", "/documents?filename=ts_138331.txt", common::FIXTURE_38331, None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let accepted: UploadAccepted = serde_json::from_slice(&body).unwrap();
    assert_eq!(accepted.status, "processing");
    assert!(!accepted.replaced);
    assert_eq!(accepted.doc_id, gs_core::ingest::compute_doc_id("ts_138331.txt").unwrap());
    let doc = wait_for_status(&app, &accepted.doc_id, "indexed").await;
    assert_eq!(doc["total_pages"], 6);

    let (status, body) = send(&app, "POST", "/documents?filename=ts_138331.txt", "A replacement text about paging occasions and nothing else. ".repeat(3), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let again: UploadAccepted = serde_json::from_slice(&body).unwrap();
    assert!(again.replaced);
    assert_eq!(again.doc_id, accepted.doc_id);
    wait_for_status(&app, &again.doc_id, "indexed").await;
    let (_, body) = post_json(&app, "/search", json!({"query": "synchronization"})).await;
    let response: WireResponse = serde_json::from_slice(&body).unwrap();
    assert!(response.results.is_empty());

    let (status, body) = send(&app, "POST", "/documents?filename=bad.bin", vec![0xffu8, 0xfe, 0x00], None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let bad: UploadAccepted = serde_json::from_slice(&body).unwrap();
    let doc = wait_for_status(&app, &bad.doc_id, "failed").await;
    assert!(doc["failure_reason"].as_str().is_some_and(|r| !r.is_empty()));

    assert_eq!(send(&app, "DELETE", &format!("/documents/{}", bad.doc_id), Body::empty(), None).await.0, StatusCode::NO_CONTENT);
    let (_, body) = send(&app, "GET", "/documents", Body::empty(), None).await;
    assert_eq!(serde_json::from_slice::<Vec<Value>>(&body).unwrap().len(), 1);
    engine.check_invariants().unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn tool_listing_depends_on_lsp_configuration() {
    let (_dir, engine) = seeded_engine(6, 1);
    let (_, body) = send(&app(engine.clone(), None), "GET", "/tools", Body::empty(), None).await;
    let tools: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(tools.len(), 1);
    assert_eq!(tools[0]["name"], "search_internal");
    assert_eq!(tools[0]["parameters"]["required"], json!(["query"]));
    assert!(tools[0]["usage_guidance"].as_str().unwrap().contains("internal systems, APIs, or proprietary data"));

    let pool = LspPool::new(vec![LspServerEntry {
        config: ServerConfig::new(vec!["unused-server".into()], "/tmp", "rust"),
        extensions: vec!["rs".into()],
    }]);
    let registry = ToolRegistry::standard(engine.clone(), Some(Arc::new(pool)));
    let app = router(AppState::new(engine, registry, &ServiceConfig::default()));
    let (_, body) = send(&app, "GET", "/tools", Body::empty(), None).await;
    let tools: Vec<Value> = serde_json::from_slice(&body).unwrap();
    let mut names: Vec<&str> = tools.iter().map(|t| t["name"].as_str().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["document_symbols", "lsp_definition", "lsp_references", "search_internal"]);

    let (status, body) = post_json(&app, "/tools/search_internal", json!({"query": "synchronization signal", "max_results": 2})).await;
    assert_eq!(status, StatusCode::OK);
    let response: WireResponse = serde_json::from_slice(&body).unwrap();
    assert!(!response.results.is_empty() && response.results.len() <= 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn bearer_token_is_enforced_when_configured() {
    let (_dir, engine) = seeded_engine(7, 1);
    let app = app(engine, Some("s3cret"));
    let body = || serde_json::to_vec(&json!({"query": "signal"})).unwrap();
    assert_eq!(send(&app, "POST", "/search", body(), None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(send(&app, "POST", "/search", body(), Some("wrong")).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(send(&app, "GET", "/tools", Body::empty(), None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(send(&app, "POST", "/search", body(), Some("s3cret")).await.0, StatusCode::OK);
}
