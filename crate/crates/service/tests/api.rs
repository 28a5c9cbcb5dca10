use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use clouddet_core::ingest::{Dataset, Store};
use clouddet_core::scoring::{score_series, DetectorConfig};
use clouddet_core::{Granularity, MetricSeries, NodePath};
use clouddet_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const START: i64 = 1_699_999_200;
const LEN: usize = 480;
const SPIKE_AT: usize = 400;

fn base_values(phase: f64, level: f64) -> Vec<f64> {
    (0..LEN)
        .map(|i| {
            let jitter = ((i * 7919 + (phase * 100.0) as usize) % 101) as f64 / 250.0;
            level + (2.0 * std::f64::consts::PI * i as f64 / 24.0 + phase).sin() + jitter
        })
        .collect()
}

fn fixture_series() -> Vec<MetricSeries> {
    let nodes = [("dc-a", "c1", "n1"), ("dc-a", "c1", "n2"), ("dc-b", "c2", "n3")];
    let mut out = Vec::new();
    for (i, (center, cluster, node)) in nodes.iter().enumerate() {
        let path = NodePath::new(*center, *cluster, *node).unwrap();
        let mut cpu = base_values(i as f64 * 0.4, 10.0 + i as f64);
        if *node == "n1" {
            // about 8 sigma of the jitter
            cpu[SPIKE_AT] += 1.0;
        }
        let mem: Vec<f64> = base_values(1.0 + i as f64, 50.0).iter().map(|v| v * 0.5).collect();
        out.push(MetricSeries::new(path.clone(), "cpu", Granularity::Hour, START, cpu));
        out.push(MetricSeries::new(path, "mem", Granularity::Hour, START, mem));
    }
    out
}

fn app() -> Router {
    let store = Store::new();
    store.insert(Dataset::from_series("fixture", fixture_series()).unwrap());
    router(AppState::new(Arc::new(store)))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn run_job(app: &Router, body: Value) -> String {
    let (status, job) = call(app, Method::POST, "/api/detect", Some(body)).await;
    assert!(status == StatusCode::ACCEPTED || status == StatusCode::OK, "{status} {job}");
    let id = job["job_id"].as_str().unwrap().to_string();
    for _ in 0..3000 {
        let (status, job) = get(app, &format!("/api/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        match job["status"].as_str().unwrap() {
            "done" => return id,
            "failed" => panic!("job failed: {job}"),
            _ => tokio::time::sleep(Duration::from_millis(10)).await,
        }
    }
    panic!("job {id} did not finish");
}

async fn detected_app() -> (Router, String) {
    let app = app();
    let id = run_job(&app, json!({"dataset_id": "fixture", "L": 96})).await;
    (app, id)
}

/// serde_json writes non-finite floats as null, so a null anywhere means a
/// NaN or infinity leaked into the payload.
fn assert_finite(v: &Value, path: &str) {
    match v {
        Value::Null => panic!("null (non-finite number?) at {path}"),
        Value::Number(n) => assert!(n.as_f64().is_some_and(f64::is_finite), "{path}"),
        Value::Array(items) => items.iter().enumerate().for_each(|(i, x)| assert_finite(x, &format!("{path}[{i}]"))),
        Value::Object(map) => map.iter().for_each(|(k, x)| assert_finite(x, &format!("{path}.{k}"))),
        _ => {}
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn detect_validation_and_idempotence() {
    let app = app();
    let (status, job) = call(&app, Method::POST, "/api/detect", Some(json!({"dataset_id": "fixture", "L": 48}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert!(job["job_id"].is_string());
    assert_eq!(job["params"]["L"], 48);
    assert_eq!(job["params"]["granularity"], "hour");

    let (status, again) = call(&app, Method::POST, "/api/detect", Some(json!({"dataset_id": "fixture", "L": 48}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["job_id"], job["job_id"]);

    let (status, err) = call(&app, Method::POST, "/api/detect", Some(json!({"dataset_id": "fixture", "L": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "bad_request");
    assert!(err["message"].as_str().unwrap().contains('8'));

    let (status, _) = call(&app, Method::POST, "/api/detect", Some(json!({"dataset_id": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::POST, "/api/detect", Some(json!({"dataset_id": "fixture", "aggregator": "median"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, "/api/detect", Some(json!({"dataset_id": "fixture", "granularity": "minute"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, "/api/detect", Some(json!({"dataset": "fixture"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn views_need_a_completed_job() {
    let app = app();
    for uri in ["/api/overview/spatial", "/api/overview/temporal", "/api/nodes/rank", "/api/cluster"] {
        let (status, err) = get(&app, uri).await;
        assert_eq!(status, StatusCode::CONFLICT, "{uri}");
        assert!(err["message"].is_string());
    }
    let (status, _) = get(&app, "/api/jobs/job-99").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/api/nowhere").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn datasets_lists_manifest() {
    let app = app();
    let (status, list) = get(&app, "/api/datasets").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list[0]["dataset_id"], "fixture");
    assert_eq!(list[0]["centers"], json!(["dc-a", "dc-b"]));
    assert_eq!(list[0]["metrics"], json!(["cpu", "mem"]));
}

#[tokio::test(flavor = "multi_thread")]
async fn job_reports_completion() {
    let (app, id) = detected_app().await;
    let (_, job) = get(&app, &format!("/api/jobs/{id}")).await;
    assert_eq!(job["status"], "done");
    assert_eq!(job["progress"], 1.0);
}

#[tokio::test(flavor = "multi_thread")]
async fn spatial_overview() {
    let (app, id) = detected_app().await;
    let (status, body) = get(&app, &format!("/api/overview/spatial?job={id}&top=20")).await;
    assert_eq!(status, StatusCode::OK);
    let centers = body["centers"].as_array().unwrap();
    assert_eq!(centers.len(), 2);
    let scores: Vec<f64> = centers.iter().map(|c| c["score"].as_f64().unwrap()).collect();
    assert!(scores[0] >= scores[1]);
    assert_finite(&body, "spatial");

    let (_, top1) = get(&app, "/api/overview/spatial?top=1").await;
    assert_eq!(top1["centers"].as_array().unwrap().len(), 1);
    assert_eq!(top1["centers"][0], centers[0]);

    let (status, inf) = get(&app, "/api/overview/spatial?threshold=inf").await;
    assert_eq!(status, StatusCode::OK);
    assert!(inf["centers"].as_array().unwrap().iter().all(|c| c["clusters"].as_array().unwrap().is_empty()));
    let (_, inf2) = get(&app, "/api/overview/spatial?threshold=%E2%88%9E").await;
    assert_eq!(inf, inf2);
}

#[tokio::test(flavor = "multi_thread")]
async fn temporal_overview() {
    let (app, _) = detected_app().await;
    let (status, body) = get(&app, "/api/overview/temporal").await;
    assert_eq!(status, StatusCode::OK);
    let points = body["points"].as_array().unwrap();
    assert_eq!(points.len(), LEN);
    assert_eq!(points[0]["timestamp"], START);
    for p in points {
        for v in p["per_metric_sum"].as_object().unwrap().values() {
            assert!(v.as_f64().unwrap() >= 0.0);
        }
    }
    let flagged = points
        .iter()
        .filter(|p| p["is_top5"]["cpu"].as_bool().unwrap_or(false))
        .count();
    assert_eq!(flagged, 5);
    assert_finite(&body, "temporal");

    let (_, daily) = get(&app, "/api/overview/temporal?granularity=day").await;
    // the fixture starts at 22:00, so the hours spill into one extra day
    let days = (START + LEN as i64 * 3600 - 1).div_euclid(86_400) - START.div_euclid(86_400) + 1;
    assert_eq!(daily["points"].as_array().unwrap().len(), days as usize);
    assert_eq!(daily["points"][0]["timestamp"], START.div_euclid(86_400) * 86_400);

    let t = START + 3600 * 10;
    let (status, _) = get(&app, &format!("/api/overview/temporal?from={t}&to={t}")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, window) = get(&app, &format!("/api/overview/temporal?from={t}&to={}", t + 3600 * 5)).await;
    assert_eq!(window["points"].as_array().unwrap().len(), 5);
    let (status, _) = get(&app, "/api/overview/temporal?granularity=minute").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn node_ranking() {
    let (app, _) = detected_app().await;
    let (_, all) = get(&app, "/api/nodes/rank").await;
    assert_eq!(all["total"], 3);
    let items = all["items"].as_array().unwrap();
    assert_eq!(items.iter().map(|i| i["rank"].as_u64().unwrap()).collect::<Vec<_>>(), vec![1, 2, 3]);
    let totals: Vec<f64> = items.iter().map(|i| i["total_score"].as_f64().unwrap()).collect();
    assert!(totals.windows(2).all(|w| w[0] >= w[1]));

    let (_, page) = get(&app, "/api/nodes/rank?offset=1&limit=1").await;
    assert_eq!(page["items"].as_array().unwrap().len(), 1);
    assert_eq!(page["items"][0], items[1]);
    let (_, beyond) = get(&app, "/api/nodes/rank?offset=10").await;
    assert!(beyond["items"].as_array().unwrap().is_empty());
    let (status, _) = get(&app, "/api/nodes/rank?limit=-1").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn performance_modes() {
    let (app, _) = detected_app().await;
    let series = fixture_series();

    let (status, raw) = get(&app, "/api/nodes/n1/performance?mode=raw").await;
    assert_eq!(status, StatusCode::OK);
    let cpu = &raw["metrics"][0];
    assert_eq!(cpu["metric"], "cpu");
    let values: Vec<f64> = cpu["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(values, series[0].values);
    assert_finite(&raw, "raw");

    let (_, norm) = get(&app, "/api/nodes/dc-a%2Fc1%2Fn2/performance?mode=normalized").await;
    assert_eq!(norm["node"]["node_id"], "n2");
    for m in norm["metrics"].as_array().unwrap() {
        assert!(m["values"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap().abs() <= 1.0 + 1e-12));
    }

    let (_, dev) = get(&app, "/api/nodes/n1/performance?mode=deviation").await;
    let base = dev["metrics"][0]["baseline"].as_f64().unwrap();
    let mean_c1: f64 = (series[0].values.iter().sum::<f64>() + series[2].values.iter().sum::<f64>()) / (2 * LEN) as f64;
    assert!((base - mean_c1).abs() < 1e-9, "{base} vs {mean_c1}");

    let (_, pca) = get(&app, "/api/nodes/n1/performance?mode=pca").await;
    assert_eq!(pca["projection"].as_array().unwrap().len(), LEN);

    let (status, _) = get(&app, "/api/nodes/n9/performance").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/api/nodes/n1/performance?mode=fancy").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn dominant_cause_at_injected_spike() {
    let (app, _) = detected_app().await;
    // oracle: the same scoring run done directly
    let records = score_series(&fixture_series()[0], &DetectorConfig::default()).unwrap();
    let r = &records[SPIKE_AT];
    assert!(!r.warmup);
    assert!(r.spike > r.periodic && r.spike > r.trend, "{r:?}");

    let (_, body) = get(&app, "/api/nodes/n1/performance").await;
    let ts = START + SPIKE_AT as i64 * 3600;
    let point = body["metrics"][0]["scores"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["timestamp"] == ts)
        .unwrap();
    assert_eq!(point["dominant"], "spike");
    assert!((point["spike"].as_f64().unwrap() - r.spike).abs() < 1e-12);
    let node_level = body["dominant"].as_array().unwrap().iter().find(|p| p["timestamp"] == ts).unwrap();
    assert_eq!(node_level["cause"], "spike");
    let warm = &body["metrics"][0]["scores"][0];
    assert_eq!(warm["dominant"], "none");
}

#[tokio::test(flavor = "multi_thread")]
async fn cluster_view() {
    let (app, _) = detected_app().await;
    let (status, body) = get(&app, "/api/cluster?method=pca").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let points = body["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    for p in points {
        let lof = p["lof"].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&lof));
    }
    assert!(body["density"]["grid"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).all(|v| v.as_f64().unwrap() >= 0.0));
    let glyphs = body["glyphs"].as_array().unwrap();
    assert_eq!(glyphs.len(), 3);
    assert_eq!(glyphs[0]["metrics"].as_array().unwrap().len(), 2);
    assert_finite(&body, "cluster");

    let (_, again) = get(&app, "/api/cluster?method=pca").await;
    assert_eq!(body, again);

    let (status, tsne) = get(&app, "/api/cluster?method=tsne&seed=3").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tsne["points"].as_array().unwrap().len(), 3);

    let (status, one) = get(&app, "/api/cluster?center=dc-b&method=pca").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(one["points"].as_array().unwrap().len(), 1);
    let (status, _) = get(&app, "/api/cluster?k=5").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&app, "/api/cluster?perplexity=-2").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn cors_headers_present() {
    let app = app();
    let req = Request::builder()
        .uri("/api/datasets")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
