//! End-to-end run over the bundled toy corpus: ingest, augment two labels,
//! review through the HTTP API, validate, annotate the test set, evaluate
//! and export. Every output lands under `work`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use sdoh_pipeline::config::PipelineConfig;
use sdoh_pipeline::dataset::{self, Split};
use sdoh_pipeline::gateway::Gateway;
use sdoh_pipeline::ndjson;
use sdoh_pipeline::pipeline::{self, LabelSet};
use sdoh_pipeline::review::{router, ReviewService};
use sdoh_pipeline::taxonomy::SdohLabel;

pub const LABELS: [SdohLabel; 2] = [SdohLabel::EvictionPending, SdohLabel::Homelessness];

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

pub fn toy_config() -> PipelineConfig {
    PipelineConfig::load(toy_dir().join("pipeline.toml")).expect("toy config")
}

async fn call(svc: &ReviewService, method: &str, uri: &str, body: Option<Value>) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(svc.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(status, StatusCode::OK, "{method} {uri}: {value}");
    value
}

/// The reviewer: a pending-eviction note must describe an eviction still in
/// progress, so completed or unclear ones are sent back.
fn judge(label: &str, text: &str) -> (bool, Option<&'static str>) {
    if label == "t3_Eviction_pending" {
        if text.contains("evicted last month") {
            return (false, Some("describes a completed eviction, not a pending one"));
        }
        if text.contains("unclear") {
            return (false, Some("leaves the eviction status unclear"));
        }
    }
    (true, None)
}

async fn review_all(svc: &ReviewService) {
    loop {
        let batches = call(svc, "GET", "/batches", None).await;
        let open: Vec<Value> = batches.as_array().unwrap().iter().filter(|b| b["open"] == true).cloned().collect();
        if open.is_empty() {
            return;
        }
        for batch in open {
            let id = batch["batch_id"].as_str().unwrap();
            let pending = call(svc, "GET", &format!("/batches/{id}/pending"), None).await;
            for item in pending.as_array().unwrap() {
                let (passed, feedback) = judge(item["label"].as_str().unwrap(), item["generated_text"].as_str().unwrap());
                let item_id = item["item_id"].as_str().unwrap();
                let body = json!({ "passed": passed, "feedback": feedback, "idempotency_key": format!("k-{item_id}") });
                call(svc, "POST", &format!("/items/{item_id}/verdict"), Some(body)).await;
            }
            call(svc, "POST", &format!("/batches/{id}/advance"), None).await;
        }
    }
}

pub fn run(work: &Path, config: &PipelineConfig, gateway: Arc<Gateway>) {
    let toy = toy_dir();
    pipeline::ingest(config, &toy.join("raw_notes.ndjson"), work).unwrap();
    for label in LABELS {
        pipeline::augment(config, work, label, None, &gateway).unwrap();
    }

    let svc = pipeline::review_service(work, gateway.clone()).unwrap();
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(review_all(&svc));
    pipeline::sync_batch_files(&svc, work).unwrap();

    let taxonomy = pipeline::load_taxonomy(config).unwrap();
    let programs = pipeline::load_programs(&taxonomy, None).unwrap();
    pipeline::validate(config, work, &programs, Split::Sft, &gateway).unwrap();

    let golds = dataset::load_records(toy.join("test_records.ndjson")).unwrap();
    let traces = pipeline::annotate(config, &golds, &programs, 5, &gateway).unwrap();
    ndjson::write(work.join("traces.ndjson"), &traces).unwrap();
    for (set, name) in [(LabelSet::All, "all"), (LabelSet::Eviction, "eviction"), (LabelSet::NonEviction, "non_eviction")] {
        let report = pipeline::evaluate(&traces, &golds, set).unwrap();
        pipeline::write_report(&report, &work.join(format!("report_{name}.json"))).unwrap();
    }

    let records = dataset::load_records(work.join("records.ndjson")).unwrap();
    pipeline::export(&records, true, Some(0), &work.join("sft_reasoning.ndjson")).unwrap();
    pipeline::export(&records, false, Some(0), &work.join("sft_labels.ndjson")).unwrap();
}

/// Every file under `dir` as (relative path, bytes), sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
