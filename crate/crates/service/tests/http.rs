use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pdm_core::balance::{smote_oversample, SmoteConfig};
use pdm_core::cf::{fit_explainer, greedy_counterfactual, CounterfactualQuery};
use pdm_core::data::{generate_synthetic_bearing, label_dataset, train_test_split, Dataset, Label, SyntheticConfig};
use pdm_core::tcn::{argmax, predict_proba, train, TcnConfig, TcnModel};
use pdm_service::{replay_session, router, AppState, DataDir, ServiceConfig};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

struct Fixture {
    train: Dataset,
    test: Dataset,
    model: TcnModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let raw = generate_synthetic_bearing(&SyntheticConfig::default()).unwrap();
        let (labeled, _) = label_dataset(&raw).unwrap();
        let (train_set, test) = train_test_split(&labeled, 0.25, 0).unwrap();
        let balanced = smote_oversample(&train_set, &SmoteConfig::default()).unwrap();
        let (model, _) = train(&balanced, &TcnConfig::default()).unwrap();
        Fixture { train: train_set, test, model }
    })
}

fn setup() -> (TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let data = DataDir::new(dir.path());
    let f = fixture();
    data.put_dataset("train", &f.train).unwrap();
    data.put_dataset("test", &f.test).unwrap();
    data.put_model("tcn", &f.model).unwrap();
    let app = app_for(&dir);
    (dir, app)
}

fn app_for(dir: &TempDir) -> Router {
    router(AppState::new(ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    }))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let body = json!({"dataset_id": "test", "model_id": "tcn", "explainer_dataset_id": "train"});
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

/// A test window the model calls anomalous, for explaining towards healthy.
fn anomalous_window(f: &Fixture) -> u64 {
    let probs = predict_proba(&f.model, &f.test.windows).unwrap();
    f.test
        .windows
        .iter()
        .zip(&probs)
        .find(|(_, p)| argmax(p) == 1)
        .map(|(w, _)| w.id)
        .expect("model flags at least one test window")
}

fn kinds(events: &Value) -> Vec<String> {
    events["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn listings_describe_the_data_directory() {
    let (_dir, app) = setup();
    let (status, datasets) = call(&app, "GET", "/datasets", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = datasets.as_array().unwrap().iter().map(|d| d["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["test", "train"]);
    assert_eq!(datasets[1]["window_count"], fixture().train.len());
    assert!(datasets[1]["labeling"]["threshold"].is_array());
    let (_, models) = call(&app, "GET", "/models", None).await;
    assert_eq!(models[0]["id"], "tcn");
    assert_eq!(models[0]["config"]["kernel_size"], 7);
}

#[tokio::test]
async fn session_creation_validates_references() {
    let (dir, app) = setup();
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    assert!(dir.path().join("sessions").join(&a).join("session.json").is_file());

    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"dataset_id": "test", "model_id": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"dataset_id": "../x", "model_id": "tcn"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let wide = generate_synthetic_bearing(&SyntheticConfig { channels: 3, n_windows: 20, ..Default::default() }).unwrap();
    DataDir::new(dir.path()).put_dataset("wide", &wide).unwrap();
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"dataset_id": "wide", "model_id": "tcn"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(v["error"], "shape_error");

    let (status, _) = call(&app, "GET", "/sessions/unknown/events", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn windows_match_direct_prediction_and_flag_anomalies_once() {
    let (_dir, app) = setup();
    let f = fixture();
    let id = new_session(&app).await;
    let (status, v) = call(&app, "GET", &format!("/sessions/{id}/windows"), None).await;
    assert_eq!(status, StatusCode::OK);
    let direct = predict_proba(&f.model, &f.test.windows).unwrap();
    let windows = v["windows"].as_array().unwrap();
    assert_eq!(windows.len(), f.test.len());
    for ((w, p), view) in f.test.windows.iter().zip(&direct).zip(windows) {
        assert_eq!(view["id"], w.id);
        let got: Vec<f64> = serde_json::from_value(view["probabilities"].clone()).unwrap();
        assert_eq!(&got, p);
        assert_eq!(view["prediction"], argmax(p));
    }
    let anomalies = direct.iter().filter(|p| argmax(p) == 1).count();
    assert!(anomalies > 0);
    assert_eq!(v["new_anomaly_events"], anomalies);

    let (_, again) = call(&app, "GET", &format!("/sessions/{id}/windows"), None).await;
    assert_eq!(again["windows"], v["windows"]);
    assert_eq!(again["new_anomaly_events"], 0);
    let (_, events) = call(&app, "GET", &format!("/sessions/{id}/events"), None).await;
    assert_eq!(kinds(&events), vec!["AnomalyDetected".to_string(); anomalies]);

    let (status, v) = call(&app, "GET", &format!("/sessions/{id}/windows?from=5&to=2"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "range_error");
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/windows?from=0&to=100000"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn healthy_range_logs_no_anomalies() {
    let (_dir, app) = setup();
    let f = fixture();
    let preds = predict_proba(&f.model, &f.test.windows).unwrap();
    let healthy_prefix = preds.iter().take_while(|p| argmax(p) == 0).count();
    assert!(healthy_prefix >= 10);
    let id = new_session(&app).await;
    let (status, v) = call(&app, "GET", &format!("/sessions/{id}/windows?from=0&to={healthy_prefix}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["new_anomaly_events"], 0);
    let (_, events) = call(&app, "GET", &format!("/sessions/{id}/events"), None).await;
    assert!(kinds(&events).is_empty());
}

#[tokio::test]
async fn explain_matches_direct_search_and_is_repeatable() {
    let (_dir, app) = setup();
    let f = fixture();
    let id = new_session(&app).await;
    let wid = anomalous_window(f);
    let body = json!({"window_id": wid, "target_class": 0, "locked_channels": []});
    let (status, first) = call(&app, "POST", &format!("/sessions/{id}/explain"), Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    assert_eq!(first["status"], "found");

    let ex = fit_explainer(Arc::new(f.model.clone()), &f.train).unwrap();
    let direct = greedy_counterfactual(&ex, &CounterfactualQuery::new(f.test.window(wid).unwrap().clone(), Label::Healthy)).unwrap();
    assert_eq!(first["counterfactual"], serde_json::to_value(&direct).unwrap());
    assert_eq!(first["series"].as_array().unwrap().len(), 2);

    let (_, second) = call(&app, "POST", &format!("/sessions/{id}/explain"), Some(body)).await;
    assert_ne!(first["request_id"], second["request_id"]);
    assert_eq!(first["counterfactual"], second["counterfactual"]);
    assert_eq!(first["report"], second["report"]);
}

#[tokio::test]
async fn fully_locked_request_returns_advice_not_an_error() {
    let (_dir, app) = setup();
    let id = new_session(&app).await;
    let wid = anomalous_window(fixture());
    let body = json!({"window_id": wid, "target_class": 0, "locked_channels": ["horizontal", 1], "num_distractors": 2});
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/explain"), Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "not_found");
    assert_eq!(v["failure"]["locked_channels"], json!([0, 1]));
    assert!(!v["failure"]["advice"].as_array().unwrap().is_empty());

    let bad = json!({"window_id": wid, "target_class": 0, "locked_channels": ["axial"]});
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/explain"), Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let missing = json!({"window_id": 999_999, "target_class": 0});
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/explain"), Some(missing)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn decisions_are_logged_in_order_and_survive_restart() {
    let (dir, app) = setup();
    let id = new_session(&app).await;
    let wid = anomalous_window(fixture());
    let explain_url = format!("/sessions/{id}/explain");
    let decide_url = format!("/sessions/{id}/decisions");

    let (_, first) = call(&app, "POST", &explain_url, Some(json!({"window_id": wid, "target_class": 0}))).await;
    let r1 = first["request_id"].clone();
    let (status, ack) = call(&app, "POST", &decide_url, Some(json!({"request_id": r1, "accepted": false, "note": "cannot change horizontal"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["seq"], 2);
    let (status, _) = call(&app, "POST", &decide_url, Some(json!({"request_id": r1, "accepted": true}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", &decide_url, Some(json!({"request_id": "nope", "accepted": true}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let relocked = json!({"window_id": wid, "target_class": 0, "locked_channels": ["horizontal"], "num_distractors": 10});
    let (_, second) = call(&app, "POST", &explain_url, Some(relocked)).await;
    let r2 = second["request_id"].clone();
    call(&app, "POST", &decide_url, Some(json!({"request_id": r2, "accepted": true}))).await;

    let (_, events) = call(&app, "GET", &format!("/sessions/{id}/events"), None).await;
    assert_eq!(
        kinds(&events),
        ["ExplainRequested", "CounterfactualReturned", "Rejected", "ExplainRequested", "CounterfactualReturned", "Accepted"]
    );
    let seqs: Vec<u64> = events["events"].as_array().unwrap().iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..6).collect::<Vec<_>>());

    let log_path = dir.path().join("sessions").join(&id).join("events.ndjson");
    let before = std::fs::read(&log_path).unwrap();
    drop(app);
    let restarted = app_for(&dir);
    let (_, after_restart) = call(&restarted, "GET", &format!("/sessions/{id}/events"), None).await;
    assert_eq!(after_restart, events);
    assert_eq!(std::fs::read(&log_path).unwrap(), before);
    let (status, _) = call(&restarted, "POST", &decide_url, Some(json!({"request_id": r2, "accepted": false}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, third) = call(&restarted, "POST", &explain_url, Some(json!({"window_id": wid, "target_class": 0}))).await;
    assert_eq!(third["counterfactual"], first["counterfactual"]);
    let (_, events) = call(&restarted, "GET", &format!("/sessions/{id}/events"), None).await;
    assert_eq!(events["events"][6]["seq"], 6);

    let replay = replay_session(&DataDir::new(dir.path()), &id).unwrap();
    assert_eq!(replay.explain_requests, 3);
    assert_eq!(replay.matched.len(), 3);
    assert!(replay.is_identical(), "{replay:?}");
}
