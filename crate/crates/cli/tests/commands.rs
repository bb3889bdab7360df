use std::path::Path;
use std::process::Command;

fn leadprice(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_leadprice"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn simulate_train_quote_evaluate_ab_test() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = [
        "simulate",
        "--scenario",
        "windows",
        "--num-options",
        "7",
        "-n",
        "4000",
        "--seed",
        "3",
        "--out",
        "log.jsonl",
    ];
    assert_eq!(leadprice(d, &sim).trim(), "4000");
    let first = std::fs::read(d.join("log.jsonl")).unwrap();
    leadprice(d, &sim);
    assert_eq!(std::fs::read(d.join("log.jsonl")).unwrap(), first);

    let train = [
        "train",
        "--log",
        "log.jsonl",
        "--out",
        "model.json",
        "--seed",
        "3",
        "--max-depth",
        "2",
        "--min-leaf",
        "300",
        "--window-hours",
        "3",
        "--ceiling",
        "60",
    ];
    let version = leadprice(d, &train);
    let bytes = std::fs::read(d.join("model.json")).unwrap();
    assert_eq!(leadprice(d, &train), version);
    assert_eq!(std::fs::read(d.join("model.json")).unwrap(), bytes);

    std::fs::write(
        d.join("request.json"),
        r#"{"features": {"business": 0.0, "region": "north", "distance": 7.0}, "start_day": "Fri", "second_level": true}"#,
    )
    .unwrap();
    let quote: serde_json::Value = serde_json::from_str(&leadprice(
        d,
        &[
            "quote",
            "--artifact",
            "model.json",
            "--request",
            "request.json",
        ],
    ))
    .unwrap();
    let prices = quote["prices"].as_array().unwrap();
    assert_eq!(prices.len(), 7);
    assert_eq!(quote["model_version"], version.trim());
    for (p, ws) in prices.iter().zip(quote["windows"].as_array().unwrap()) {
        let low = ws
            .as_array()
            .unwrap()
            .iter()
            .map(|w| w.as_i64().unwrap())
            .min();
        assert_eq!(low, p.as_i64());
        assert!(p.as_i64().unwrap() <= 6000);
    }

    let reports: serde_json::Value = serde_json::from_str(&leadprice(
        d,
        &["evaluate", "--log", "log.jsonl", "--max-depth", "2"],
    ))
    .unwrap();
    let names: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["naive", "vanilla_mnl", "framework"]);

    let ab: serde_json::Value = serde_json::from_str(&leadprice(
        d,
        &[
            "ab-test",
            "--scenario",
            "windows",
            "--num-options",
            "7",
            "--artifact",
            "model.json",
            "--legacy-log",
            "log.jsonl",
            "-n",
            "2000",
            "--seed",
            "5",
        ],
    ))
    .unwrap();
    assert_eq!(
        ab["arm_a"]["quotes"].as_u64().unwrap() + ab["arm_b"]["quotes"].as_u64().unwrap(),
        2000
    );
    assert!(ab["p_value"].as_f64().unwrap() <= 1.0);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_leadprice"))
        .args(["train", "--log", "empty.jsonl", "--out", "m.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    assert!(!dir.path().join("m.json").exists());
}
