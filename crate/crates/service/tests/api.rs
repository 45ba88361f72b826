use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use subpop::dataspace::{generate_synthetic, SyntheticParams};
use subpop::harness::{prepare_dataset, sweep, IndexEntry, PipelineConfig, Selection, Store, SweepConfig};
use subpop::subpops::read_manifest;
use subpop::targets::TargetConfig;
use subpop_service::{router, AppState, EventBody, Page, RunHandle, RunState, ServiceConfig, StreamEvent, SubpopInfo};
use tempfile::TempDir;
use tower::ServiceExt;

fn quick_pipeline() -> PipelineConfig {
    let mut p = PipelineConfig {
        targets: TargetConfig { levels: vec![0.5, 0.75, 1.0], trials: 1, ..TargetConfig::default() },
        converge: None,
        ..PipelineConfig::default()
    };
    p.kkt.restarts = 2;
    p.kkt.steps = 200;
    p
}

struct Fixture {
    dir: TempDir,
    dataset: String,
    attackable: usize,
    trivial: usize,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticParams::new(3.0, 1.0, 2)).unwrap();
    let ws = dir.path().join("datasets").join(ds.tag());
    let manifest = prepare_dataset(&ds, &ws, 2, 0.5).unwrap();
    let attackable = manifest.iter().position(|e| e.is_attackable()).unwrap();
    let trivial = manifest.iter().position(|e| e.trivial == Some(true)).unwrap();
    Fixture { dir, dataset: ds.tag(), attackable, trivial }
}

fn config(root: &Path, store: Option<&Path>) -> ServiceConfig {
    ServiceConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        datasets: root.join("datasets"),
        store: store.map(Path::to_path_buf),
        runs: root.join("runs"),
        workers: 2,
        pipeline: quick_pipeline(),
    }
}

fn app(root: &Path, store: Option<&Path>) -> Router {
    router(AppState::load(&config(root, store)).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    call_with(app, method, uri, body, None).await
}

async fn call_with(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("idempotency-key", k);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get_json<T: DeserializeOwned>(app: &Router, uri: &str) -> T {
    let (status, body) = call(app, "GET", uri, None).await;
    assert_eq!(status, StatusCode::OK, "{uri}: {}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

async fn submit(app: &Router, body: Value) -> RunHandle {
    let (status, bytes) = call(app, "POST", "/runs", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

fn parse_events(bytes: &[u8]) -> Vec<StreamEvent> {
    bytes
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).unwrap())
        .collect()
}

async fn trace(app: &Router, id: &str, from: u64) -> Vec<StreamEvent> {
    let (status, bytes) = call(app, "GET", &format!("/runs/{id}/trace?from={from}"), None).await;
    assert_eq!(status, StatusCode::OK);
    parse_events(&bytes)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn finished_run_trace_replays_the_persisted_record() {
    let f = fixture();
    let app = app(f.dir.path(), None);
    let handle = submit(&app, json!({"dataset": f.dataset, "subpop": f.attackable})).await;
    assert_eq!(handle.state, RunState::Queued);

    // two consumers attached while the run is live see the same events
    let (a, b) = tokio::join!(trace(&app, &handle.id, 0), trace(&app, &handle.id, 0));
    assert_eq!(a, b);
    let last = a.last().unwrap();
    let EventBody::Summary(summary) = &last.body else { panic!("stream must end with a summary") };
    assert_eq!(summary.state, RunState::Succeeded);
    assert!(a.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1));

    let record: subpop::attacks::AttackRecord = get_json(&app, &format!("/runs/{}/record", handle.id)).await;
    let streamed: Vec<_> = a
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::Iteration(t) => Some(t.clone()),
            EventBody::Summary(_) => None,
        })
        .collect();
    assert_eq!(streamed, record.trace);
    assert_eq!(summary.n_poisons, record.n_poisons());

    let k = 2.min(a.len() as u64 - 1);
    let tail = trace(&app, &handle.id, k).await;
    assert_eq!(tail, a[k as usize..].to_vec());
    assert!(trace(&app, &handle.id, last.seq).await.is_empty());

    let got: RunHandle = get_json(&app, &format!("/runs/{}", handle.id)).await;
    assert_eq!(got.state, RunState::Succeeded);
    assert!(got.target.is_some());

    // a restarted service serves the same finished run and keeps ids unique
    let restarted = self::app(f.dir.path(), None);
    assert_eq!(get_json::<RunHandle>(&restarted, &format!("/runs/{}", handle.id)).await, got);
    assert_eq!(trace(&restarted, &handle.id, 0).await, a);
    let next = submit(&restarted, json!({"dataset": f.dataset, "subpop": f.attackable, "params": {"budget_frac": 0.2}})).await;
    assert_ne!(next.id, handle.id);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn duplicate_requests_share_one_run() {
    let f = fixture();
    let app = app(f.dir.path(), None);
    let body = json!({"dataset": f.dataset, "subpop": f.attackable, "params": {"converge_tol": 1e-9, "budget_frac": 0.05}});
    let (_, a) = call_with(&app, "POST", "/runs", Some(body.clone()), Some("k1")).await;
    let (_, b) = call_with(&app, "POST", "/runs", Some(body.clone()), Some("k1")).await;
    let a: RunHandle = serde_json::from_slice(&a).unwrap();
    let b: RunHandle = serde_json::from_slice(&b).unwrap();
    assert_eq!(a.id, b.id);
    // same work without a key coalesces while the first run is live
    let c = submit(&app, body.clone()).await;
    assert_eq!(c.id, a.id);
    trace(&app, &a.id, 0).await;
    let page: Page<RunHandle> = get_json(&app, "/runs").await;
    assert_eq!(page.items.len(), 1);
    // the key stays bound after the run finished
    let (_, d) = call_with(&app, "POST", "/runs", Some(body), Some("k1")).await;
    assert_eq!(serde_json::from_slice::<RunHandle>(&d).unwrap().id, a.id);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cancel_keeps_the_partial_trace() {
    let f = fixture();
    let app = app(f.dir.path(), None);
    let handle = submit(
        &app,
        json!({"dataset": f.dataset, "subpop": f.attackable, "params": {"converge_tol": 1e-12, "budget_frac": 1.0}}),
    )
    .await;
    let req = Request::builder().uri(format!("/runs/{}/trace", handle.id)).body(Body::empty()).unwrap();
    let mut body = app.clone().oneshot(req).await.unwrap().into_body();
    let mut seen = Vec::new();
    while seen.is_empty() {
        let frame = body.frame().await.unwrap().unwrap();
        seen.extend(parse_events(frame.data_ref().unwrap()));
    }
    let (status, _) = call(&app, "POST", &format!("/runs/{}/cancel", handle.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let rest = body.collect().await.unwrap().to_bytes();
    seen.extend(parse_events(&rest));
    let EventBody::Summary(summary) = &seen.last().unwrap().body else { panic!("no summary") };
    assert_eq!(summary.state, RunState::Cancelled);
    let record: subpop::attacks::AttackRecord = get_json(&app, &format!("/runs/{}/record", handle.id)).await;
    assert!(!record.trace.is_empty());
    assert_eq!(record.trace.len(), seen.len() - 1);
    assert_eq!(record.stop, subpop::attacks::StopReason::Cancelled);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_requests_are_refused() {
    let f = fixture();
    let app = app(f.dir.path(), None);
    let (status, body) = call(&app, "POST", "/runs", Some(json!({"dataset": f.dataset, "subpop": f.trivial}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let msg: Value = serde_json::from_slice(&body).unwrap();
    assert!(msg["message"].as_str().unwrap().contains("trivial"));
    assert!(msg["message"].as_str().unwrap().contains("excluded"));

    let cases = [
        json!({"dataset": "nope", "subpop": 0}),
        json!({"dataset": f.dataset, "subpop": 9999}),
        json!({"dataset": f.dataset, "subpop": f.attackable, "target": {"index": 9999}}),
    ];
    for c in cases {
        assert_eq!(call(&app, "POST", "/runs", Some(c)).await.0, StatusCode::NOT_FOUND);
    }
    let kkt = json!({"dataset": f.dataset, "subpop": f.attackable, "attack": "kkt"});
    assert_eq!(call(&app, "POST", "/runs", Some(kkt)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/runs/run-999999", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/runs/run-999999/trace", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/datasets/nope/subpops", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/datasets?cursor=zz", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn listings_paginate_by_cursor() {
    let f = fixture();
    let app = app(f.dir.path(), None);

    let empty: Page<IndexEntry> = get_json(&app, "/results").await;
    assert!(empty.items.is_empty() && empty.next_cursor.is_none());
    let again: Page<IndexEntry> = get_json(&app, "/results?cursor=0").await;
    assert_eq!(again, empty);

    let all: Page<SubpopInfo> = get_json(&app, &format!("/datasets/{}/subpops?limit=1000", f.dataset)).await;
    let mut paged = Vec::new();
    let mut cursor: Option<String> = None;
    let mut pages = 0;
    loop {
        let uri = match &cursor {
            Some(c) => format!("/datasets/{}/subpops?limit=5&cursor={c}", f.dataset),
            None => format!("/datasets/{}/subpops?limit=5", f.dataset),
        };
        let page: Page<SubpopInfo> = get_json(&app, &uri).await;
        pages += 1;
        paged.extend(page.items);
        match page.next_cursor {
            Some(c) => cursor = Some(c),
            None => break,
        }
    }
    assert_eq!(paged, all.items);
    assert_eq!(pages, all.items.len().div_ceil(5));
    assert!(all.items.iter().enumerate().all(|(i, s)| s.ordinal == i));

    let targets: Page<Value> = get_json(&app, &format!("/subpops/{}:{}/targets", f.dataset, f.attackable)).await;
    assert!(!targets.items.is_empty());
    assert_eq!(
        call(&app, "GET", &format!("/subpops/{}:{}/targets", f.dataset, f.trivial), None).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn results_mirror_the_store_index() {
    let f = fixture();
    let store_dir = f.dir.path().join("store");
    let datasets = f.dir.path().join("datasets");
    let cfg = SweepConfig { pipeline: quick_pipeline(), workers: 1, selection: Selection::Sample { per_dataset: 1, seed: 3 } };
    tokio::task::block_in_place(|| sweep(&datasets, &store_dir, &cfg, |_| {})).unwrap();
    let entries = Store::open(&store_dir).unwrap().entries();
    let app = app(f.dir.path(), Some(&store_dir));
    let page: Page<IndexEntry> = get_json(&app, &format!("/results?dataset={}", f.dataset)).await;
    assert_eq!(page.items, entries);
    // the wire form carries exactly the stored fields
    let raw: Value = get_json(&app, "/results").await;
    let line = std::fs::read_to_string(store_dir.join("index.jsonl")).unwrap();
    let stored: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(raw["items"][0], stored);

    let manifest = read_manifest(&datasets.join(&f.dataset).join("subpops.jsonl")).unwrap();
    let ordinal = entries[0].ordinal;
    assert!(manifest[ordinal].is_attackable());
}
