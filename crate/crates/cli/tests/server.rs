mod common;

use std::time::Duration;

use common::*;
use leadprice::engine::QuoteEngine;

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn healthz_reports_the_model_version() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let version = toy_artifact(0.1).save(&path).unwrap();
    let server = Server::start(&path, Duration::from_secs(60)).await;
    let body: serde_json::Value = reqwest::get(server.url("/healthz"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model_version"], version.as_str());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn bad_requests_get_client_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    toy_artifact(0.1).save(&path).unwrap();
    let server = Server::start(&path, Duration::from_secs(60)).await;
    let http = reqwest::Client::new();
    let wrong_length =
        serde_json::json!({"features": {}, "start_day": "Mon", "available": [true, false]});
    let cases = [
        "{not json".to_string(),
        r#"{"features": {}, "start_day": "Someday"}"#.to_string(),
        r#"{"features": 3, "start_day": "Mon"}"#.to_string(),
        wrong_length.to_string(),
    ];
    for body in cases {
        let r = http
            .post(server.url("/quote"))
            .header("content-type", "application/json")
            .body(body.clone())
            .send()
            .await
            .unwrap();
        assert!(r.status().is_client_error(), "{body}: {}", r.status());
        let err: serde_json::Value = r.json().await.unwrap();
        assert!(err["error"].is_string());
    }
    let health = reqwest::get(server.url("/healthz")).await.unwrap();
    assert!(health.status().is_success());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_get_identical_answers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    toy_artifact(0.1).save(&path).unwrap();
    let server = Server::start(&path, Duration::from_secs(60)).await;
    let http = reqwest::Client::new();
    let mut handles = Vec::new();
    for _ in 0..32 {
        let (http, url) = (http.clone(), server.url("/quote"));
        handles.push(tokio::spawn(async move {
            http.post(url)
                .json(&request())
                .send()
                .await
                .unwrap()
                .bytes()
                .await
                .unwrap()
        }));
    }
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
    let direct = QuoteEngine::load(&path).unwrap().quote(&request()).unwrap();
    let served: leadprice::engine::QuoteResponse = serde_json::from_slice(&bodies[0]).unwrap();
    assert_eq!(served, direct);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn hot_reload_drops_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = hot_reload_under_load(dir.path(), 8).await;
    assert_ne!(outcome.old_version, outcome.new_version);
    assert_eq!(outcome.failures, 0, "{outcome:?}");
    assert!(outcome.flips.iter().all(|&f| f == 1), "{outcome:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn a_broken_artifact_keeps_the_old_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let version = toy_artifact(0.1).save(&path).unwrap();
    let server = Server::start(&path, Duration::from_millis(10)).await;
    std::fs::write(&path, "{\"schema_version\": 1").unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(server.state.version(), version);
    let r = reqwest::Client::new()
        .post(server.url("/quote"))
        .json(&request())
        .send()
        .await
        .unwrap();
    assert!(r.status().is_success());
}
