//! Regenerate the shipped offline corpus under fixtures/corpus/:
//! sessions, gold annotations, recorded chat fixtures, the planted-facts
//! manifest, and a ready-to-use pipeline config.
//!
//! Usage: gen-fixtures [output-dir]   (default: fixtures/corpus)

use std::path::PathBuf;

use memloop_testkit::{author, build_corpus, find_compression_seed, manifest};

#[tokio::main]
async fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures/corpus"));
    std::fs::create_dir_all(&out_dir).expect("create output dir");

    let corpus = build_corpus();
    let seed = find_compression_seed(&corpus).await;
    eprintln!("compression seed: {seed}");
    let authored = author(&corpus, seed).await;

    let manifest = manifest(&corpus, seed);
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');

    let config_toml = format!(
        "mode = \"fixture\"\n\n[fixture]\ndimension = {}\nchat_fixtures = [\"chat_fixtures.jsonl\"]\n",
        memloop_testkit::corpus::FIXTURE_DIMENSION
    );

    let files = [
        ("sessions.jsonl", corpus.sessions_jsonl()),
        ("gold.jsonl", corpus.gold_jsonl()),
        ("chat_fixtures.jsonl", authored.chat_fixtures_jsonl),
        ("manifest.json", manifest_json),
        ("config.toml", config_toml),
    ];
    for (name, content) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, content).expect("write fixture file");
        eprintln!("wrote {}", path.display());
    }
}
