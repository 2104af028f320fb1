use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pcod_core::bench::{presets, run_benchmark};
use pcod_service::{router, ServiceError, Session, SessionFiles};
use serde_json::{json, Value};
use tower::ServiceExt;

fn artifacts(dir: &Path) {
    let mut cfg = presets::multi_domain();
    cfg.output_dir = Some(dir.to_path_buf());
    run_benchmark(&cfg).unwrap();
}

fn files(dir: &Path) -> SessionFiles {
    SessionFiles::new(dir.join("scores.jsonl"), dir.join("projection.csv"), dir.join("verdicts.jsonl"))
}

fn app(dir: &Path) -> Router {
    let session = Session::load(&files(dir)).unwrap();
    router(Arc::new(Mutex::new(session)), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

#[tokio::test]
async fn summary_points_and_detail() {
    let dir = tempfile::tempdir().unwrap();
    artifacts(dir.path());
    let app = app(dir.path());

    let (st, summary) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(summary["n_points"], 168);
    assert_eq!(summary["flagged_count"], 42);
    assert_eq!(summary["policy"], json!({"mode": "top_fraction", "q": 0.25}));

    let (_, all) = call(&app, "GET", "/api/points", None).await;
    let all = all.as_array().unwrap();
    assert_eq!(all.len(), 168);
    let scores: Vec<f64> = all.iter().map(|p| p["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let (_, flagged) = call(&app, "GET", "/api/points?flagged_only=true", None).await;
    assert_eq!(flagged.as_array().unwrap().len(), 42);

    let id = all[0]["id"].as_str().unwrap();
    let (st, detail) = call(&app, "GET", &format!("/api/points/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(detail["neighbors"].as_array().unwrap().len(), 10);
    assert!(detail["text"].as_str().unwrap().len() > 20);

    let (st, _) = call(&app, "GET", "/api/points/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn policy_changes_recompute_flags() {
    let dir = tempfile::tempdir().unwrap();
    artifacts(dir.path());
    let app = app(dir.path());

    let (st, s) = call(&app, "PUT", "/api/policy", Some(json!({"mode": "top_fraction", "q": 0.1}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["flagged_count"], 17);

    let (_, all) = call(&app, "GET", "/api/points", None).await;
    let t = all[4]["score"].as_f64().unwrap();
    let (st, s) = call(&app, "PUT", "/api/policy", Some(json!({"mode": "absolute", "T": t}))).await;
    assert_eq!(st, StatusCode::OK);
    let expected = all.as_array().unwrap().iter().filter(|p| p["score"].as_f64().unwrap() > t).count();
    assert_eq!(s["flagged_count"], expected);
    assert_eq!(s["cut"], t);

    let (st, _) = call(&app, "PUT", "/api/policy", Some(json!({"mode": "top_fraction", "q": 1.5}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = call(&app, "PUT", "/api/policy", Some(json!({"mode": "sideways"}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    // rejected updates leave the active policy alone
    let (_, s) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(s["flagged_count"], expected);
}

#[tokio::test]
async fn verdicts_persist_across_restart() {
    let dir = tempfile::tempdir().unwrap();
    artifacts(dir.path());
    let id;
    {
        let app = app(dir.path());
        let (_, all) = call(&app, "GET", "/api/points", None).await;
        id = all[0]["id"].as_str().unwrap().to_string();
        let (st, _) = call(&app, "POST", "/api/verdicts", Some(json!({"doc_id": id, "verdict": "unsure"}))).await;
        assert_eq!(st, StatusCode::CREATED);
        let (st, _) = call(
            &app,
            "POST",
            "/api/verdicts",
            Some(json!({"doc_id": id, "verdict": "confirmed-outlier", "note": "value far above peers"})),
        )
        .await;
        assert_eq!(st, StatusCode::CREATED);

        let (st, _) = call(&app, "POST", "/api/verdicts", Some(json!({"doc_id": "ghost", "verdict": "unsure"}))).await;
        assert_eq!(st, StatusCode::NOT_FOUND);
        let (st, _) = call(&app, "POST", "/api/verdicts", Some(json!({"doc_id": id, "verdict": "maybe"}))).await;
        assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    }

    let app = app(dir.path());
    let (_, detail) = call(&app, "GET", &format!("/api/points/{id}"), None).await;
    let history = detail["history"].as_array().unwrap();
    assert_eq!(history.len(), 2);
    assert_eq!(detail["verdict"], "confirmed-outlier");
    assert!(history[0]["timestamp"].as_str().unwrap() <= history[1]["timestamp"].as_str().unwrap());

    let (st, export) = call(&app, "GET", "/api/export", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(export["log"].as_array().unwrap().len(), 2);
    let row = export["points"].as_array().unwrap().iter().find(|p| p["id"] == id.as_str()).unwrap();
    assert_eq!(row["note"], "value far above peers");
}

#[test]
fn projection_missing_an_id_is_named() {
    let dir = tempfile::tempdir().unwrap();
    artifacts(dir.path());
    let path = dir.path().join("projection.csv");
    let content = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = content.lines().collect();
    let dropped = lines.remove(5).split(',').next().unwrap().to_string();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = Session::load(&files(dir.path())).unwrap_err();
    assert!(matches!(err, ServiceError::IdMismatch(_)));
    assert!(err.to_string().contains(&dropped), "{err}");
}

#[test]
fn unwritable_log_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    artifacts(dir.path());
    let mut f = files(dir.path());
    f.log = dir.path().join("no-such-dir").join("verdicts.jsonl");
    let err = Session::load(&f).unwrap_err();
    assert!(err.is_environment(), "{err}");
}

#[test]
fn log_with_unknown_id_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    artifacts(dir.path());
    std::fs::write(
        dir.path().join("verdicts.jsonl"),
        "{\"doc_id\":\"ghost\",\"verdict\":\"unsure\",\"note\":\"\",\"timestamp\":\"2026-01-01T00:00:00Z\"}\n",
    )
    .unwrap();
    let err = Session::load(&files(dir.path())).unwrap_err();
    assert!(err.to_string().contains("ghost"));
}

#[tokio::test]
async fn static_assets_are_served() {
    let dir = tempfile::tempdir().unwrap();
    artifacts(dir.path());
    let assets = dir.path().join("console");
    std::fs::create_dir(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<html>console</html>").unwrap();
    let session = Session::load(&files(dir.path())).unwrap();
    let app = router(Arc::new(Mutex::new(session)), Some(assets));
    let resp = app
        .oneshot(Request::builder().uri("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<html>console</html>");
}
