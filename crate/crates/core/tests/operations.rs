use chrono::Weekday;
use leadprice::artifact::{ModelArtifact, ARTIFACT_SCHEMA_VERSION};
use leadprice::engine::{QuoteEngine, QuoteRequest};
use leadprice::features::{FeatureValue, FeatureVector};
use leadprice::pricer::Guardrails;
use leadprice::quotelog::{ingest_path, ingest_reader, write_log, IngestConfig};
use leadprice::second_level::{WindowCatalog, WindowFitConfig, WindowGrid};
use leadprice::simulator::{generate_quotes, scenarios, RandomExploration, SimLog};
use leadprice::train::{train, SecondLevelTrainConfig, TrainConfig};
use leadprice::{choice::BucketScheme, mst::TreeHyperparams, Error};

fn simulated(n: usize, seed: u64) -> SimLog {
    let explore = RandomExploration {
        low: 5.0,
        high: 35.0,
        seed,
    };
    generate_quotes(&scenarios::with_windows(7), n, &explore, seed).unwrap()
}

fn emit(log: &SimLog) -> Vec<u8> {
    let mut out = Vec::new();
    write_log(&log.rows, &mut out).unwrap();
    out
}

fn config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(Guardrails::uniform(7, 0.0, 60.0).unwrap());
    c.seed = seed;
    c.buckets = BucketScheme::for_horizon(7);
    c.tree = TreeHyperparams {
        max_depth: 2,
        min_leaf_samples: 400,
        ..TreeHyperparams::default()
    };
    c.second_level = Some(SecondLevelTrainConfig {
        catalog: WindowCatalog::uniform(3).unwrap(),
        fit: WindowFitConfig::default(),
        grid: WindowGrid::default(),
    });
    c
}

fn request() -> QuoteRequest {
    let mut features = FeatureVector::new();
    features.insert("business", FeatureValue::Num(1.0));
    features.insert("region", FeatureValue::Cat("south".into()));
    features.insert("distance", FeatureValue::Num(12.5));
    QuoteRequest {
        features,
        start_day: Weekday::Thu,
        available: Some(vec![true, true, false, true, true, true, true]),
        costs: None,
        second_level: true,
        window_costs: None,
    }
}

#[test]
fn simulated_logs_round_trip_through_ingest() {
    let log = simulated(3_000, 1);
    let bytes = emit(&log);
    let ingested = ingest_reader(bytes.as_slice(), &IngestConfig::default()).unwrap();
    assert!(ingested.rejected.is_empty());
    assert_eq!(ingested.data.rows, log.rows);
    let mut again = Vec::new();
    write_log(&ingested.data.rows, &mut again).unwrap();
    assert_eq!(again, bytes);
}

fn corrupt_line(bytes: &[u8], line: usize) -> Vec<u8> {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[line - 1] = lines[line - 1].replacen("\"timestamp\":\"", "\"timestamp\":\"x", 1);
    (lines.join("\n") + "\n").into_bytes()
}

#[test]
fn malformed_rows_are_reported_by_line() {
    let bytes = emit(&simulated(10, 2));
    let bad = corrupt_line(&bytes, 4);
    let lenient = IngestConfig {
        max_reject_fraction: 0.5,
    };
    let ingested = ingest_reader(bad.as_slice(), &lenient).unwrap();
    assert_eq!(ingested.rejected.len(), 1);
    assert_eq!(ingested.rejected[0].line, 4);
    assert_eq!(ingested.data.len(), 9);

    match ingest_reader(bad.as_slice(), &IngestConfig::default()) {
        Err(Error::TooManyRejects {
            rejected: 1,
            total: 10,
            first,
            ..
        }) => assert!(first.starts_with("line 4")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn one_percent_of_rejects_is_tolerated() {
    let bytes = emit(&simulated(200, 3));
    let two = corrupt_line(&corrupt_line(&bytes, 10), 150);
    assert_eq!(
        ingest_reader(two.as_slice(), &IngestConfig::default())
            .unwrap()
            .rejected
            .len(),
        2
    );
    let three = corrupt_line(&two, 151);
    assert!(matches!(
        ingest_reader(three.as_slice(), &IngestConfig::default()),
        Err(Error::TooManyRejects { rejected: 3, .. })
    ));
}

#[test]
fn empty_input_and_foreign_schema_versions() {
    assert!(matches!(
        ingest_reader(&b"\n\n"[..], &IngestConfig::default()),
        Err(Error::Empty(_))
    ));
    let bytes = emit(&simulated(5, 4));
    let text = String::from_utf8(bytes).unwrap().replacen(
        "\"schema_version\":1",
        "\"schema_version\":9",
        1,
    );
    assert!(matches!(
        ingest_reader(text.as_bytes(), &IngestConfig::default()),
        Err(Error::SchemaVersion {
            expected: 1,
            found: 9
        })
    ));
}

fn pipeline(dir: &std::path::Path, seed: u64) -> (Vec<u8>, Vec<u8>, String) {
    let log_path = dir.join("quotes.jsonl");
    std::fs::write(&log_path, emit(&simulated(6_000, seed))).unwrap();
    let data = ingest_path(&log_path, &IngestConfig::default())
        .unwrap()
        .data;
    let artifact = train(&data, scenarios::with_windows(7).costs, &config(seed)).unwrap();
    let path = dir.join("model.json");
    artifact.save(&path).unwrap();
    let engine = QuoteEngine::load(&path).unwrap();
    let response = engine.quote(&request()).unwrap();
    let windows = response.windows.as_ref().unwrap();
    for (k, ws) in windows.iter().enumerate() {
        if request().available.unwrap()[k] {
            assert_eq!(ws.iter().min(), Some(&response.prices[k]));
        } else {
            assert!(ws.is_empty());
        }
    }
    (
        std::fs::read(&path).unwrap(),
        serde_json::to_vec(&response).unwrap(),
        response.model_version,
    )
}

#[test]
fn end_to_end_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path(), 21);
    let second = pipeline(b.path(), 21);
    assert_eq!(first, second);
}

#[test]
fn artifacts_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let data = ingest_reader(
        emit(&simulated(4_000, 5)).as_slice(),
        &IngestConfig::default(),
    )
    .unwrap()
    .data;
    let artifact = train(&data, scenarios::with_windows(7).costs, &config(5)).unwrap();
    let path = dir.path().join("a.json");
    let v1 = artifact.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let (loaded, v2) = ModelArtifact::load(&path).unwrap();
    assert_eq!(loaded, artifact);
    assert_eq!(v1, v2);
    let copy = dir.path().join("b.json");
    loaded.save(&copy).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), first);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with(".tmp")
        })
        .collect();
    assert!(leftovers.is_empty());

    let text = String::from_utf8(first).unwrap().replacen(
        &format!("\"schema_version\": {ARTIFACT_SCHEMA_VERSION}"),
        "\"schema_version\": 99",
        1,
    );
    assert!(matches!(
        ModelArtifact::from_json(&text),
        Err(Error::SchemaVersion { found: 99, .. })
    ));
}

#[test]
fn window_without_data_has_too_few_rows() {
    let log = simulated(1_000, 6);
    let data = ingest_reader(emit(&log).as_slice(), &IngestConfig::default())
        .unwrap()
        .data;
    let mut c = config(6);
    c.window_end = Some(log.rows[0].timestamp - chrono::Duration::weeks(20));
    assert!(matches!(
        train(&data, scenarios::with_windows(7).costs, &c),
        Err(Error::InsufficientRows { found: 0, .. })
    ));
}
