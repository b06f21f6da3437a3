use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hivechat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hivechat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hivechat(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

const SCENARIO: &str = r#"
name = "cli"
seed = 5
duration_secs = 1500.0
embedding_path = "vectors.txt"
embedding_dim = 3

[topic_bots]
weather = "weather"
chit = "filler"

[[bots]]
bot_id = "weather"
type = "weather"
example_messages = ["weather in Seattle", "rain in Boston"]
good_topics = ["weather"]

[[bots]]
bot_id = "filler"
type = "filler"
example_messages = ["hi", "joke"]
good_topics = ["chit"]
"#;

fn write_fixture(dir: &Path) -> String {
    let vectors = "weather 1 0 0\nrain 1 0 0\nforecast 1 0 0\nhi 0 0 1\njoke 0 0 1\nbored 0 0 1\nsushi 0 1 0\n";
    std::fs::write(dir.join("vectors.txt"), vectors).unwrap();
    let mut s = SCENARIO.to_string();
    let texts = [
        ("weather in Seattle", "weather"),
        ("hi", "chit"),
        ("rain in Boston", "weather"),
        ("tell me a joke", "chit"),
        ("any sushi nearby", "food"),
        ("forecast for Kabul", "weather"),
        ("I am bored", "chit"),
    ];
    for c in 0..6 {
        s.push_str(&format!(
            "\n[[conversations]]\nuser_id = \"u{c}\"\nstart_secs = {}\nautomation = {}\n",
            c as f64 * 200.0,
            c % 2 == 0
        ));
        for (i, (t, topic)) in texts.iter().enumerate() {
            s.push_str(&format!(
                "\n[[conversations.messages]]\nat_secs = {}\ntext = \"{t}\"\ntopic = \"{topic}\"\n",
                5.0 + 25.0 * i as f64
            ));
        }
        for w in 0..3 {
            s.push_str(&format!(
                "\n[[conversations.workers]]\nworker_id = \"w{w}\"\np_correct = 0.8\npropose_prob = 0.7\n"
            ));
        }
    }
    let path = dir.join("scenario.toml");
    std::fs::write(&path, s).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_reproducible_and_metrics_agree() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_fixture(dir.path());
    let log_a = dir.path().join("a.jsonl");
    let log_b = dir.path().join("b.jsonl");
    let a = json(&[
        "simulate",
        "--scenario",
        &scenario,
        "--log",
        log_a.to_str().unwrap(),
    ]);
    json(&[
        "simulate",
        "--scenario",
        &scenario,
        "--log",
        log_b.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(&log_a).unwrap(),
        std::fs::read(&log_b).unwrap()
    );
    let m = json(&["metrics", "--log", log_a.to_str().unwrap()]);
    assert_eq!(a, m);
    assert_eq!(a["aggregate"]["conversations"], 6);
    let csv = ok(&["metrics", "--log", log_a.to_str().unwrap(), "--csv"]);
    assert!(csv.lines().count() >= 2);

    let other = dir.path().join("c.jsonl");
    json(&[
        "simulate",
        "--scenario",
        &scenario,
        "--seed",
        "6",
        "--log",
        other.to_str().unwrap(),
    ]);
    assert_ne!(
        std::fs::read(&log_a).unwrap(),
        std::fs::read(&other).unwrap()
    );
}

#[test]
fn pairs_voter_and_threshold_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_fixture(dir.path());
    let vectors = dir.path().join("vectors.txt");
    let vectors = vectors.to_str().unwrap();
    let log = dir.path().join("log.jsonl");
    let log = log.to_str().unwrap();
    ok(&["simulate", "--scenario", &scenario, "--log", log]);

    let pairs = dir.path().join("pairs.jsonl");
    let pairs = pairs.to_str().unwrap();
    ok(&["extract-pairs", "--log", log, "--out", pairs]);
    let first: Value = serde_json::from_str(
        std::fs::read_to_string(pairs)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(first["votes"]["down"], 0);
    let blocked = ok(&["extract-pairs", "--log", log, "--block", "w0,w1,w2"]);
    assert!(
        blocked.trim().is_empty(),
        "every worker blocked leaves nothing"
    );

    let query = first["query"].as_str().unwrap();
    let reply = ok(&[
        "retrieve",
        "--pairs",
        pairs,
        "--embeddings",
        vectors,
        "--k",
        "1",
        query,
    ]);
    assert!(!reply.trim().is_empty());

    let model = dir.path().join("model.json");
    let model = model.to_str().unwrap();
    let summary = json(&[
        "train-voter",
        "--log",
        log,
        "--embeddings",
        vectors,
        "--out",
        model,
    ]);
    assert!(summary["train"].as_u64().unwrap() > 0);
    let eval = json(&[
        "eval-voter",
        "--model",
        model,
        "--log",
        log,
        "--embeddings",
        vectors,
    ]);
    assert_eq!(eval["threshold"], 0.7);
    let chosen = json(&[
        "optimize-threshold",
        "--model",
        model,
        "--log",
        log,
        "--embeddings",
        vectors,
        "--p-misfire",
        "0.692",
        "--e-upvoted",
        "0.569",
        "--write",
    ]);
    let t = chosen["chosen"]["threshold"].as_f64().unwrap();
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(model).unwrap()).unwrap();
    assert_eq!(saved["confidence_threshold"].as_f64().unwrap(), t);
    assert!(chosen["curve"].as_array().unwrap().len() >= 101);
}

#[test]
fn inspection_commands() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_fixture(dir.path());
    let vectors = dir.path().join("vectors.txt");
    let vectors = vectors.to_str().unwrap();
    let log = dir.path().join("log.jsonl");
    let log = log.to_str().unwrap();
    ok(&["simulate", "--scenario", &scenario, "--log", log]);

    let dump = json(&["selector", "dump", "--log", log, "--embeddings", vectors]);
    let ids: Vec<&str> = dump
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["bot_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["filler", "weather"]);

    let csv = ok(&["ledger", "export", "--log", log]);
    assert!(csv.starts_with("worker_id,points,dollars"));

    let report = json(&["eval-selector", "--scenario", &scenario]);
    assert!((report["priors"]["weather"][0]["prior"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert!(!report["windows"].as_array().unwrap().is_empty());

    let v = json(&["embed", "--embeddings", vectors, "hi weather"]);
    assert_eq!(v["values"], serde_json::json!([0.5, 0.0, 0.5]));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "duration_secs = -1.0\n").unwrap();
    let out = hivechat(&["simulate", "--scenario", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = hivechat(&[
        "metrics",
        "--log",
        dir.path().join("missing.jsonl").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
