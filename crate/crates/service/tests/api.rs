use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use keycov::canonicalizer::BigramEmbedder;
use keycov::corpus::{generate_synthetic_corpus, split_by_report_hash, Page, SplitName, SplitRatios, SynthesisConfig};
use keycov::evaluation::{write_sweep_csv, SweepRow};
use keycov::extractor::{extract_page, ExtractorConfig, RuleBackend};
use keycov::inventory::{coverage, CanonicalKeyEntry, CoverageMode, KeyInventory};
use keycov::orchestrator::{InventoryStore, LoopConfig};
use keycov::Span;
use keycov_service::api::{router, AppState, EvalData};
use serde_json::{json, Value};
use tower::ServiceExt;

const CANON: [&str; 2] = ["患者入院时主要症状体征描述", "既往手术外伤输血史及过敏"];
const ALIAS: [&str; 2] = ["患者入院时主要症伏体征描述", "既往手术外伤输血吏及过敏"];

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
}

fn inventory() -> KeyInventory {
    KeyInventory::from_entries(CANON.iter().map(|c| CanonicalKeyEntry::new(*c)).collect()).unwrap()
}

fn state(inv: KeyInventory) -> (tempfile::TempDir, AppState) {
    let dir = tempfile::tempdir().unwrap();
    let store = InventoryStore::init(dir.path().join("store"), inv).unwrap();
    let s = AppState::new(store, Box::new(RuleBackend::new()), Box::new(BigramEmbedder::default()), LoopConfig::default());
    (dir, s)
}

fn fixture() -> Fixture {
    let (dir, s) = state(inventory());
    Fixture { _dir: dir, app: router(Arc::new(s)) }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn page_with(keys: &[&str]) -> Page {
    let mut text = String::new();
    let mut spans = Vec::new();
    for k in keys {
        let k0 = text.chars().count();
        text.push_str(k);
        let k1 = text.chars().count();
        text.push_str("：无特殊\n");
        spans.push((Span::new(k0, k1), Span::new(k1 + 1, k1 + 4), None));
    }
    Page::from_spans("r1", "r1-p1", text, spans).unwrap()
}

#[tokio::test]
async fn health_reports_version() {
    let f = fixture();
    let (status, body) = call(&f.app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "inventory_version": 0}));
}

#[tokio::test]
async fn alias_registration_and_history() {
    let f = fixture();
    let (status, rec) = call(&f.app, "POST", "/v1/inventory/aliases", Some(json!({"canonical": CANON[0], "alias": "主诉"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((rec["version_before"].as_u64(), rec["version_after"].as_u64()), (Some(0), Some(1)));

    let (_, inv) = call(&f.app, "GET", "/v1/inventory", None).await;
    assert_eq!(inv["version"], 1);
    assert_eq!(inv["entries"][0]["aliases"], json!(["主诉"]));
    let (status, old) = call(&f.app, "GET", "/v1/inventory?version=0", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(old["entries"][0]["aliases"], json!([]));
    let (status, _) = call(&f.app, "GET", "/v1/inventory?version=9", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(&f.app, "POST", "/v1/inventory/aliases", Some(json!({"canonical": CANON[1], "alias": "主诉"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&f.app, "POST", "/v1/inventory/aliases", Some(json!({"canonical": "无此键", "alias": "x"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn extract_matches_library_call() {
    let f = fixture();
    let page = page_with(&CANON);
    let (status, body) = call(&f.app, "POST", "/v1/extract", Some(json!({"text": page.text}))).await;
    assert_eq!(status, StatusCode::OK);
    let direct = extract_page(&page.text, &inventory(), &RuleBackend::new(), &ExtractorConfig::default()).unwrap();
    assert_eq!(body["pairs"], serde_json::to_value(&direct).unwrap());
    assert_eq!(body["pairs"].as_array().unwrap().len(), 2);

    let (_, one) = call(&f.app, "POST", "/v1/extract", Some(json!({"text": page.text, "keys": [CANON[1]]}))).await;
    assert_eq!(one["pairs"].as_array().unwrap().len(), 1);
    assert_eq!(one["pairs"][0]["canonical_key"], CANON[1]);

    let (status, _) = call(&f.app, "POST", "/v1/extract", Some(json!({"text": "x", "keys": [CANON[1]], "fraction": 50.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&f.app, "POST", "/v1/extract", Some(json!({"text": "x", "fraction": 0.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn extract_without_aliases_misses_alias_forms() {
    let f = fixture();
    call(&f.app, "POST", "/v1/inventory/aliases", Some(json!({"canonical": CANON[0], "alias": ALIAS[0]}))).await;
    let text = page_with(&[ALIAS[0]]).text;
    let (_, with) = call(&f.app, "POST", "/v1/extract", Some(json!({"text": text}))).await;
    let (_, without) = call(&f.app, "POST", "/v1/extract", Some(json!({"text": text, "include_aliases": false}))).await;
    assert_eq!(with["pairs"].as_array().unwrap().len(), 1);
    assert!(without["pairs"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn auto_batch_advances_version() {
    let f = fixture();
    let page = page_with(&ALIAS);
    let (status, rec) = call(&f.app, "POST", "/v1/batches", Some(json!({"pages": [page], "mode": "auto"}))).await;
    assert_eq!(status, StatusCode::OK, "{rec}");
    assert_eq!(rec["batch_id"], "1");
    assert_eq!(rec["novel_keys"].as_array().unwrap().len(), 2);
    assert_eq!((rec["inventory_version_before"].as_u64(), rec["inventory_version_after"].as_u64()), (Some(0), Some(2)));
    assert_eq!((rec["coverage_before"].as_f64(), rec["coverage_after"].as_f64()), (Some(0.0), Some(1.0)));
    let (_, h) = call(&f.app, "GET", "/health", None).await;
    assert_eq!(h["inventory_version"], 2);
    let (_, accepted) = call(&f.app, "GET", "/v1/review/queue?status=accepted", None).await;
    assert_eq!(accepted.as_array().unwrap().len(), 2);
    let (_, history) = call(&f.app, "GET", "/v1/batches", None).await;
    assert_eq!(history.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn interactive_review_round_trip() {
    let f = fixture();
    let page = page_with(&["体格检查结果记录", ALIAS[0]]);
    let (status, rec) = call(&f.app, "POST", "/v1/batches", Some(json!({"pages": [page]}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rec["inventory_version_after"], 0);

    let (_, queue) = call(&f.app, "GET", "/v1/review/queue?status=pending", None).await;
    let queue = queue.as_array().unwrap().clone();
    assert_eq!(queue.len(), 2);
    let attach = queue.iter().find(|p| p["attach_to"] == CANON[0]).expect("attachment proposal");
    let fresh = queue.iter().find(|p| p["attach_to"].is_null()).expect("new-key proposal");

    let id = attach["proposal_id"].as_str().unwrap();
    let (status, d) = call(&f.app, "POST", "/v1/review/decisions", Some(json!({"proposal_id": id, "action": "accept"}))).await;
    assert_eq!(status, StatusCode::OK, "{d}");
    assert_eq!(d["version_after"], 1);
    let (_, inv) = call(&f.app, "GET", "/v1/inventory", None).await;
    assert_eq!(inv["version"], 1);
    assert_eq!(inv["entries"][0]["aliases"], json!([ALIAS[0]]));

    let (status, _) = call(&f.app, "POST", "/v1/review/decisions", Some(json!({"proposal_id": id, "action": "reject"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let id = fresh["proposal_id"].as_str().unwrap();
    let (status, d) =
        call(&f.app, "POST", "/v1/review/decisions", Some(json!({"proposal_id": id, "action": "rename", "canonical": "体格检查"}))).await;
    assert_eq!(status, StatusCode::OK, "{d}");
    let (_, inv) = call(&f.app, "GET", "/v1/inventory", None).await;
    assert_eq!(inv["entries"][2]["canonical"], "体格检查");
    assert_eq!(inv["entries"][2]["aliases"], json!(["体格检查结果记录"]));

    let (status, _) = call(&f.app, "POST", "/v1/review/decisions", Some(json!({"proposal_id": "nope", "action": "accept"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&f.app, "GET", "/v1/review/queue?status=bogus", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn split_decision_must_partition_members() {
    let f = fixture();
    let page = page_with(&["体格检查结果记录及异常说明", "体格检查结果纪录及异常说明"]);
    call(&f.app, "POST", "/v1/batches", Some(json!({"pages": [page]}))).await;
    let (_, queue) = call(&f.app, "GET", "/v1/review/queue?status=pending", None).await;
    let p = &queue[0];
    assert_eq!(p["members"].as_array().unwrap().len(), 2, "{queue}");
    let id = p["proposal_id"].as_str().unwrap();
    let bad = json!({"proposal_id": id, "action": "split", "parts": [["体格检查结果记录及异常说明"]]});
    let (status, _) = call(&f.app, "POST", "/v1/review/decisions", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let good = json!({"proposal_id": id, "action": "split", "parts": [["体格检查结果记录及异常说明"], ["体格检查结果纪录及异常说明"]]});
    let (status, d) = call(&f.app, "POST", "/v1/review/decisions", Some(good)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((d["version_before"].as_u64(), d["version_after"].as_u64()), (Some(0), Some(1)));
    let (_, inv) = call(&f.app, "GET", "/v1/inventory", None).await;
    assert_eq!(inv["entries"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn coverage_and_sweep_metrics() {
    let c = generate_synthetic_corpus(&SynthesisConfig { num_keys: 20, pages: 60, seed: 8, ..Default::default() }).unwrap();
    let split = split_by_report_hash(&c.pages, SplitRatios::default(), 8).unwrap();
    let (dir, s) = state(c.inventory.clone());
    let rows = vec![SweepRow { fraction: 50.0, coverage: 0.75, em: Default::default(), btm: Default::default() }];
    let sweep_path = dir.path().join("sweep.csv");
    write_sweep_csv(std::fs::File::create(&sweep_path).unwrap(), &rows).unwrap();
    let s = s.with_eval(EvalData { pages: c.pages.clone(), split: split.clone() }).with_sweep_file(sweep_path);
    let app = router(Arc::new(s));

    let (status, body) = call(&app, "GET", "/v1/metrics/coverage?split=test&fraction=50", None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let view = c.inventory.with_frequencies_from(split.pages(SplitName::Train, &c.pages)).top_fraction_keys(50.0).unwrap();
    let expect = coverage(&view, split.pages(SplitName::Test, &c.pages), CoverageMode::Occurrence).unwrap();
    assert_eq!(body["coverage"].as_f64(), Some(expect));
    assert_eq!(body["mode"], "occurrence");
    let (_, full) = call(&app, "GET", "/v1/metrics/coverage", None).await;
    assert_eq!(full["coverage"].as_f64(), Some(1.0));
    let (status, _) = call(&app, "GET", "/v1/metrics/coverage?mode=nope", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call(&app, "GET", "/v1/metrics/sweep", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["rows"][0]["fraction"], 50.0);
    assert_eq!(body["rows"][0]["coverage"], 0.75);
}

#[tokio::test]
async fn metrics_without_data_are_not_found() {
    let f = fixture();
    let (status, _) = call(&f.app, "GET", "/v1/metrics/coverage", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&f.app, "GET", "/v1/metrics/sweep", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_page_in_batch_is_rejected() {
    let f = fixture();
    let mut page = serde_json::to_value(page_with(&CANON)).unwrap();
    page["annotations"][0]["value"] = json!("不对");
    let (status, _) = call(&f.app, "POST", "/v1/batches", Some(json!({"pages": [page]}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
