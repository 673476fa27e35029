//! Black-box CLI tests: exit codes and the client-of-a-served-instance path.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}

fn memloop() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memloop"))
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = memloop()
        .args(["run", "--sessions", "x.jsonl", "--out-dir", "/tmp/nowhere"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn nonexistent_config_file_is_a_usage_error() {
    let out = memloop()
        .args([
            "--config",
            "/does/not/exist.toml",
            "run",
            "--sessions",
            "x.jsonl",
            "--out-dir",
            "/tmp/nowhere",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_stage_is_a_usage_error() {
    let out = memloop()
        .args([
            "--config",
            corpus_dir().join("config.toml").to_str().unwrap(),
            "run",
            "--sessions",
            "x.jsonl",
            "--out-dir",
            "/tmp/nowhere",
            "--stop-after",
            "bogus",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_sessions_exit_1_but_write_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let sessions = dir.path().join("sessions.jsonl");
    // First line comes from the fixture corpus; the second session has no
    // recorded fixtures and must fail without sinking the first.
    let good = std::fs::read_to_string(corpus_dir().join("sessions.jsonl")).unwrap();
    let good_lines: Vec<&str> = good.lines().filter(|l| l.contains("\"alex\"")).collect();
    let mut content = good_lines.join("\n");
    content.push_str("\n{\"session_id\":\"ghost\",\"turn_index\":0,\"speaker\":\"user\",\"text\":\"nothing recorded here\"}\n");
    std::fs::write(&sessions, content).unwrap();

    let out_dir = dir.path().join("out");
    let out = memloop()
        .args([
            "--config",
            corpus_dir().join("config.toml").to_str().unwrap(),
            "run",
            "--sessions",
            sessions.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("alex.json").exists());
    assert!(!out_dir.join("ghost.json").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixture miss"));
}

#[test]
fn emit_flags_write_debug_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = memloop()
        .args([
            "--config",
            corpus_dir().join("config.toml").to_str().unwrap(),
            "run",
            "--sessions",
            corpus_dir().join("sessions.jsonl").to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
            "--emit-alignment",
            "--emit-verification",
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let alignment: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("alex.alignment.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(alignment["per_turn"].as_array().unwrap().len(), 20);
    assert_eq!(alignment["tau_match"], 0.6);

    let verification: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("alex.verification.json")).unwrap(),
    )
    .unwrap();
    let actions = verification["actions"].as_array().unwrap();
    assert!(actions
        .iter()
        .any(|a| a["action"] == "discarded_hallucination"));
    assert!(actions.iter().all(|a| a["original_text"].is_string()));
}

#[test]
fn compress_needs_no_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("c.jsonl");
    let out = memloop()
        .args([
            "compress",
            "--ratio",
            "0.5",
            "--seed",
            "11",
            "--in",
            corpus_dir().join("sessions.jsonl").to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_path.exists());
}

#[test]
fn cli_works_against_a_served_instance() {
    let mut server = memloop()
        .args([
            "--config",
            corpus_dir().join("config.toml").to_str().unwrap(),
            "serve",
            "--addr",
            "127.0.0.1:0",
        ])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = server.stderr.take().unwrap();
    let mut line = String::new();
    BufReader::new(stderr).read_line(&mut line).unwrap();
    let url = line
        .rsplit("listening on ")
        .next()
        .expect("serve announces its address")
        .trim()
        .to_string();

    let dir = tempfile::tempdir().unwrap();
    let out = memloop()
        .args([
            "--server",
            &url,
            "run",
            "--sessions",
            corpus_dir().join("sessions.jsonl").to_str().unwrap(),
            "--gold",
            corpus_dir().join("gold.jsonl").to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
            "--report",
            dir.path().join("report.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let _ = server.kill();
    let _ = server.wait();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["memory_integrity"], 1.0);
}
