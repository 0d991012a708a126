use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn affect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affect"))
        .args(args)
        .env_remove("AFFECT_CONFIG")
        .output()
        .expect("binary runs")
}

fn synth_to(path: &Path, archetype: &str, duration: &str, seed: &str) {
    let out = affect(&[
        "synth",
        "--archetype",
        archetype,
        "--duration",
        duration,
        "--seed",
        seed,
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_is_deterministic() {
    let a = affect(&[
        "synth",
        "--archetype",
        "anger",
        "--duration",
        "2",
        "--seed",
        "9",
    ]);
    let b = affect(&[
        "synth",
        "--archetype",
        "anger",
        "--duration",
        "2",
        "--seed",
        "9",
    ]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 60);
}

#[test]
fn zero_duration_synth_is_empty() {
    let out = affect(&["synth", "--duration", "0"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_archetype_is_a_usage_error() {
    let out = affect(&["synth", "--archetype", "boredom"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_verb_and_help() {
    assert_eq!(affect(&["dance"]).status.code(), Some(1));
    assert_eq!(affect(&["--help"]).status.code(), Some(0));
}

#[test]
fn corrupt_recording_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rec.jsonl");
    synth_to(&path, "happiness", "1", "1");
    let mut lines: Vec<String> = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[16] = "{\"t\": oops".into();
    fs::write(&path, lines.join("\n")).unwrap();

    let out = affect(&["replay", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 17"));
}

#[test]
fn missing_recording_is_a_data_error() {
    assert_eq!(
        affect(&["replay", "/nonexistent/rec.jsonl"]).status.code(),
        Some(2)
    );
}

#[test]
fn fast_and_realtime_reports_match() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.jsonl");
    synth_to(&rec, "relaxation", "2.5", "4");
    let fast = affect(&["replay", rec.to_str().unwrap(), "--fast"]);
    let realtime = affect(&["replay", rec.to_str().unwrap(), "--realtime"]);
    assert!(fast.status.success() && realtime.status.success());
    assert_eq!(fast.stdout, realtime.stdout);
    let report: serde_json::Value = serde_json::from_slice(&fast.stdout).unwrap();
    assert_eq!(report["phase"], "preparation");
    // frames up to t = 2.467, first hop one window in
    assert_eq!(report["history"].as_array().unwrap().len(), 15);
}

#[test]
fn scripted_replay_produces_a_decodable_cosmos_url() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.jsonl");
    let script = dir.path().join("script.jsonl");
    synth_to(&rec, "happiness", "12", "2");
    fs::write(
        &script,
        concat!(
            "{\"t\": 0.0, \"cmd\": \"start\"}\n",
            "{\"t\": 0.5, \"cmd\": \"teach_start\", \"label\": \"happiness\"}\n",
            "{\"t\": 5.0, \"cmd\": \"explore\"}\n",
            "{\"t\": 11.9, \"cmd\": \"end\"}\n",
        ),
    )
    .unwrap();
    let out = affect(&[
        "--cosmos-base-url",
        "https://example.org/cosmos",
        "replay",
        rec.to_str().unwrap(),
        "--script",
        script.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["phase"], "cosmos");
    let url = report["cosmos"]["url"].as_str().unwrap();
    assert!(url.starts_with("https://example.org/cosmos/c#"));

    let decoded = affect(&["cosmos", "decode", url]);
    assert!(decoded.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&decoded.stdout).unwrap();
    assert_eq!(summary["session_id"], report["session_id"]);
}

#[test]
fn bad_payload_is_a_data_error() {
    assert_eq!(affect(&["cosmos", "decode", "!!!"]).status.code(), Some(2));
    assert_eq!(affect(&["cosmos", "decode", "AgAA"]).status.code(), Some(2));
}

#[test]
fn bad_override_is_a_usage_error() {
    let out = affect(&["--set", "no_equals_sign", "eval"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn occupied_port_is_a_bind_error() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let out = affect(&["serve", "--no-osc", "--ws-port", &port]);
    assert_eq!(out.status.code(), Some(3));
}
