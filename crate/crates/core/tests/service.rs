//! HTTP API exercised in-process through the router.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use diematch::diegraph::{ExportFormat, SimilarityGraph};
use diematch::pipeline::{
    export_at, generate_corpus, journal_path, load_graph, persist_graph, router, PairwiseConfig, ServiceOptions,
    ServiceState, SynthCorpusSpec,
};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const TOKEN: &str = "s3cret";

fn sample_graph() -> SimilarityGraph {
    let nodes = ["A", "B", "C", "D"];
    SimilarityGraph::build(
        &nodes,
        vec![
            ("A".to_string(), "B".to_string(), 0.97),
            ("B".to_string(), "C".to_string(), 0.96),
            ("C".to_string(), "D".to_string(), 0.3),
        ],
    )
    .unwrap()
}

fn state_at(dir: &std::path::Path, options: ServiceOptions) -> Arc<ServiceState> {
    let path = dir.join("graph.json");
    persist_graph(&sample_graph(), &path).unwrap();
    Arc::new(ServiceState::new(
        load_graph(&path).unwrap(),
        ServiceOptions {
            graph_path: Some(path),
            token: Some(TOKEN.into()),
            ..options
        },
    ))
}

async fn call(state: &Arc<ServiceState>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(state: &Arc<ServiceState>, uri: &str) -> (StatusCode, Value) {
    let (s, body) = call(state, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&body).unwrap())
}

fn edit(body: Value, token: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/api/edits").header(header::CONTENT_TYPE, "application/json");
    if let Some(t) = token {
        b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    b.body(Body::from(body.to_string())).unwrap()
}

fn members(clusters: &Value) -> Vec<Vec<String>> {
    clusters["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| serde_json::from_value(c["members"].clone()).unwrap())
        .collect()
}

#[tokio::test]
async fn graph_document_has_version() {
    let dir = tempfile::tempdir().unwrap();
    let st = state_at(dir.path(), ServiceOptions::default());
    let (s, v) = get_json(&st, "/api/graph").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["version"], 0);
    assert_eq!(v["nodes"], json!(["A", "B", "C", "D"]));
    assert_eq!(v["edges"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn forced_cut_splits_cluster_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let st = state_at(dir.path(), ServiceOptions::default());
    let (_, before) = get_json(&st, "/api/clusters?tau=0.95").await;
    assert_eq!(members(&before), vec![vec!["A", "B", "C"], vec!["D"]]);

    let (s, _) = call(&st, edit(json!({"a": "A", "b": "B", "edit": "forced_cut"}), None)).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&st, edit(json!({"a": "A", "b": "B", "edit": "forced_cut"}), Some("wrong"))).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let (s, body) = call(
        &st,
        edit(json!({"a": "B", "b": "A", "edit": "forced_cut", "author": "curator"}), Some(TOKEN)),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, json!({"version": 1, "changed": true}));

    let (_, after) = get_json(&st, "/api/clusters?tau=0.95").await;
    assert_eq!(after["version"], 1);
    assert_eq!(members(&after), vec![vec!["A"], vec!["B", "C"], vec!["D"]]);

    // Persisted document and journal reproduce the post-edit state.
    let path = dir.path().join("graph.json");
    let reloaded = load_graph(&path).unwrap();
    assert_eq!(reloaded.version(), 1);
    assert_eq!(reloaded.journal().len(), 1);
    assert_eq!(reloaded.journal()[0].author, "curator");
    assert_eq!(std::fs::read_to_string(journal_path(&path)).unwrap().lines().count(), 1);
    let fresh = Arc::new(ServiceState::new(reloaded, ServiceOptions::default()));
    let (_, again) = get_json(&fresh, "/api/clusters?tau=0.95").await;
    assert_eq!(again, after);
}

#[tokio::test]
async fn idempotent_edit_and_version_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let st = state_at(dir.path(), ServiceOptions::default());
    let link = json!({"a": "C", "b": "D", "edit": "forced_link"});
    let (s, _) = call(&st, edit(link.clone(), Some(TOKEN))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, body) = call(&st, edit(link, Some(TOKEN))).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, json!({"version": 1, "changed": false}));

    let (s, body) = call(
        &st,
        edit(json!({"a": "A", "b": "D", "edit": "forced_cut", "expected_version": 0}), Some(TOKEN)),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"]["code"], "version_conflict");
    assert_eq!(v["error"]["current_version"], 1);

    let del = |uri: &str, token: bool| {
        let mut b = Request::delete(uri);
        if token {
            b = b.header(header::AUTHORIZATION, format!("Bearer {TOKEN}"));
        }
        b.body(Body::empty()).unwrap()
    };
    let (s, _) = call(&st, del("/api/edits/D/C", false)).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, body) = call(&st, del("/api/edits/D/C?expected_version=1", true)).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, json!({"version": 2, "changed": true}));
    assert_eq!(st.snapshot().overlay().len(), 0);
}

#[tokio::test]
async fn malformed_requests_get_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let st = state_at(dir.path(), ServiceOptions::default());
    for uri in ["/api/clusters?tau=1.5", "/api/clusters?tau=abc", "/api/clusters/export?format=xml"] {
        let (s, v) = get_json(&st, uri).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(v["error"]["code"], "bad_request", "{uri}");
    }
    let (s, v) = get_json(&st, "/api/pairs/A/Z").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"]["message"].as_str().unwrap().contains('Z'));
    let (s, v) = get_json(&st, "/api/nowhere").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");

    let bad = Request::post("/api/edits")
        .header(header::CONTENT_TYPE, "application/json")
        .header(header::AUTHORIZATION, format!("Bearer {TOKEN}"))
        .body(Body::from("{\"a\": \"A\""))
        .unwrap();
    let (s, body) = call(&st, bad).await;
    assert!(s.is_client_error());
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert!(v["error"]["message"].is_string());
    let (s, _) = call(&st, edit(json!({"a": "A", "b": "A", "edit": "forced_cut"}), Some(TOKEN))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&st, edit(json!({"a": "A", "b": "Q", "edit": "forced_cut"}), Some(TOKEN))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn export_matches_cli_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let st = state_at(dir.path(), ServiceOptions::default());
    let (s, _) = call(&st, edit(json!({"a": "C", "b": "D", "edit": "forced_link"}), Some(TOKEN))).await;
    assert_eq!(s, StatusCode::OK);
    let graph_path = dir.path().join("graph.json");
    for (format, ext) in [(ExportFormat::Csv, "csv"), (ExportFormat::Json, "json")] {
        let (s, body) = call(
            &st,
            Request::get(format!("/api/clusters/export?tau=0.95&format={ext}"))
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(body, export_at(&st.snapshot(), 0.95, format).unwrap().into_bytes());

        let out = dir.path().join(format!("clusters.{ext}"));
        let cli = std::process::Command::new(env!("CARGO_BIN_EXE_diematch"))
            .args(["cluster", "--tau", "0.95", "--format", ext, "--graph"])
            .arg(&graph_path)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(cli.success());
        assert_eq!(std::fs::read(&out).unwrap(), body, "{ext} export differs from the CLI");
    }
}

#[tokio::test]
async fn pair_detail() {
    let dir = tempfile::tempdir().unwrap();
    let st = state_at(dir.path(), ServiceOptions::default());
    let (s, v) = get_json(&st, "/api/pairs/B/A").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["a"], "A");
    assert_eq!(v["b"], "B");
    assert_eq!(v["probability"], 0.97);
    assert_eq!(v["retained"], true);
    assert!(v["score"].is_null());
    let (_, v) = get_json(&st, "/api/pairs/A/D").await;
    assert!(v["probability"].is_null());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scan_points_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = generate_corpus(&SynthCorpusSpec {
        coins_per_die: vec![2],
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    corpus.write(dir.path().join("scans")).unwrap();
    let manifest = diematch::pipeline::CorpusManifest::load(dir.path().join("scans/manifest.json")).unwrap();
    let ids = manifest.ids();
    let mut config = PairwiseConfig::default();
    config.registration.n_descriptor_samples = 400;
    let st = state_at(
        dir.path(),
        ServiceOptions {
            manifest: Some(manifest),
            config,
            ..Default::default()
        },
    );

    let (s, v) = get_json(&st, &format!("/api/scans/{}/points?voxel=0.2", ids[0])).await;
    assert_eq!(s, StatusCode::OK);
    let n = v["count"].as_u64().unwrap() as usize;
    assert!(n > 0 && n <= 20_000);
    assert_eq!(v["points"].as_array().unwrap().len(), n);
    // A tiny voxel is coarsened until the render budget holds.
    let (_, v) = get_json(&st, &format!("/api/scans/{}/points?voxel=0.001", ids[0])).await;
    assert!(v["count"].as_u64().unwrap() <= 20_000);
    let (s, _) = get_json(&st, &format!("/api/scans/{}/points?voxel=0", ids[0])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = get_json(&st, "/api/scans/nope/points").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let preview = || {
        Request::post(format!("/api/pairs/{}/{}/preview", ids[1], ids[0]))
            .body(Body::empty())
            .unwrap()
    };
    // The second request is polled while the first holds the only permit.
    let (first, second) = tokio::join!(call(&st, preview()), call(&st, preview()));
    assert_eq!(first.0, StatusCode::OK);
    assert_eq!(second.0, StatusCode::TOO_MANY_REQUESTS);
    let v: Value = serde_json::from_slice(&first.1).unwrap();
    assert_eq!(v["a"], ids[0].as_str());
    assert_eq!(v["transform"].as_array().unwrap().len(), 16);
    assert!(v["source"].as_array().unwrap().len() <= 20_000);
    let (s, _) = call(&st, preview()).await;
    assert_eq!(s, StatusCode::OK, "permit released after the job");
}
