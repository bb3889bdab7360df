//! Fixtures for exercising the HTTP service.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc, Weekday};
use leadprice::artifact::{ModelArtifact, ARTIFACT_SCHEMA_VERSION};
use leadprice::choice::{BucketMap, BucketScheme, MnlParams};
use leadprice::engine::QuoteRequest;
use leadprice::features::{FeatureSchema, FeatureVector};
use leadprice::mst::SegmentationTree;
use leadprice::predictors::{CancellationModel, CostTable, SegmentedCancellation};
use leadprice::pricer::{GridConfig, Guardrails, ObjectiveConfig};
use leadprice_cli::server::{router, spawn_reloader, ServerState};
use tokio::task::JoinHandle;

/// A one-segment artifact over seven options with price sensitivity `beta`.
pub fn toy_artifact(beta: f64) -> ModelArtifact {
    let t = Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap();
    let buckets = BucketScheme::Fixed(BucketMap::single(7));
    ModelArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        trained_at: t,
        window_start: t,
        window_end: t,
        subsample_fraction: 1.0,
        seed: 0,
        training_rows: 0,
        feature_schema: FeatureSchema::new(Vec::new()),
        tree: SegmentationTree::single(
            MnlParams::uniform([0.3, -0.02, 0.0], beta, 0.05, buckets).unwrap(),
        ),
        cancellation: SegmentedCancellation::global_only(CancellationModel::Constant { rate: 0.1 }),
        second_level: None,
        guardrails: Guardrails::uniform(7, 0.0, 80.0).unwrap(),
        objective: ObjectiveConfig::default(),
        grid: GridConfig::default(),
        costs: CostTable::constant(10.0, 7),
    }
}

pub fn request() -> QuoteRequest {
    QuoteRequest {
        features: FeatureVector::new(),
        start_day: Weekday::Wed,
        available: Some(vec![true, true, true, false, true, true, true]),
        costs: Some(vec![1000, 950, 900, 900, 850, 800, 800]),
        second_level: false,
        window_costs: None,
    }
}

pub struct Server {
    pub addr: SocketAddr,
    pub state: Arc<ServerState>,
    tasks: Vec<JoinHandle<()>>,
}

impl Server {
    pub async fn start(artifact: &Path, poll: Duration) -> Self {
        let state = ServerState::load(artifact).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(state.clone());
        let serve = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        let reload = spawn_reloader(state.clone(), poll);
        Self {
            addr,
            state,
            tasks: vec![serve, reload],
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

#[derive(Debug)]
pub struct ReloadOutcome {
    pub requests: usize,
    pub failures: usize,
    /// Number of version changes each client observed.
    pub flips: Vec<usize>,
    pub old_version: String,
    pub new_version: String,
}

/// Runs `clients` request loops against a server on artifact A, replaces
/// the file with artifact B mid-run, and keeps going until every client has
/// seen B for a while.
pub async fn hot_reload_under_load(dir: &Path, clients: usize) -> ReloadOutcome {
    let path = dir.join("model.json");
    let old_version = toy_artifact(0.10).save(&path).unwrap();
    let server = Server::start(&path, Duration::from_millis(20)).await;
    let url = server.url("/quote");
    let body = serde_json::to_vec(&request()).unwrap();
    let http = reqwest::Client::new();

    let mut handles = Vec::new();
    for _ in 0..clients {
        let (http, url, body) = (http.clone(), url.clone(), body.clone());
        handles.push(tokio::spawn(async move {
            let mut versions: Vec<String> = Vec::new();
            let mut failures = 0;
            let mut after_new = 0;
            let mut sent = 0;
            while after_new < 20 && sent < 20_000 {
                sent += 1;
                let response = http
                    .post(&url)
                    .header("content-type", "application/json")
                    .body(body.clone())
                    .send()
                    .await;
                let ok = match response {
                    Ok(r) if r.status().is_success() => r.json::<serde_json::Value>().await.ok(),
                    _ => None,
                };
                match ok {
                    Some(v) => {
                        let version = v["model_version"].as_str().unwrap_or_default().to_string();
                        if versions.last() != Some(&version) {
                            versions.push(version);
                        }
                        if versions.len() > 1 {
                            after_new += 1;
                        }
                    }
                    None => failures += 1,
                }
            }
            (sent, failures, versions.len().saturating_sub(1))
        }));
    }
    tokio::time::sleep(Duration::from_millis(150)).await;
    let new_version = toy_artifact(0.25).save(&path).unwrap();

    let mut outcome = ReloadOutcome {
        requests: 0,
        failures: 0,
        flips: Vec::new(),
        old_version,
        new_version,
    };
    for h in handles {
        let (sent, failures, flips) = h.await.unwrap();
        outcome.requests += sent;
        outcome.failures += failures;
        outcome.flips.push(flips);
    }
    assert_eq!(server.state.version(), outcome.new_version);
    outcome
}
