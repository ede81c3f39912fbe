use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tokforge::{save_tokenizer, EmbeddingMatrix, Mode, ModelParts, PreTokenizerConfig, TokenizerModel, Vocab};

fn tokforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokforge"))
        .args(args)
        .env("TOKFORGE_THREADS", "2")
        .output()
        .expect("spawn tokforge")
}

fn ok(args: &[&str]) -> Output {
    let out = tokforge(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy2(dir: &Path) -> PathBuf {
    let vocab = Vocab::from_tokens(["a", "b", "c", "d", "ab", "abc", "bc"].iter().map(|t| t.as_bytes())).unwrap();
    let mut parts = ModelParts::new(Mode::ByteLevel, vocab);
    parts.pre_tokenizer = PreTokenizerConfig::whitespace();
    let id = |t: &str| parts.vocab.id(t.as_bytes()).unwrap();
    parts.merges = vec![(id("a"), id("b")), (id("ab"), id("c"))];
    let path = dir.join("toy2.json");
    save_tokenizer(&TokenizerModel::new(parts).unwrap(), &path).unwrap();
    path
}

const WORDS: &[&str] = &[
    "the", "then", "there", "other", "mother", "brother", "token", "tokens", "tokenizer", "prune",
    "pruning", "extend", "extension", "merge", "merges", "merged", "vocabulary", "vocab", "corpus",
];

fn corpus(dir: &Path, name: &str, seed: usize) -> PathBuf {
    let mut text = String::new();
    for line in 0..300 {
        let words: Vec<&str> = (0..12)
            .map(|i| WORDS[(line * 7 + i * i * 3 + seed * 5) % WORDS.len()])
            .collect();
        text.push_str(&words.join(" "));
        text.push('\n');
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Trains a small byte-level model on a generated corpus.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let corpus = corpus(dir, "corpus.txt", 0);
    let model = dir.join("base.json");
    ok(&["train", "--corpus", s(&corpus), "--vocab-size", "300", "--out", s(&model)]);
    (model, corpus)
}

#[test]
fn stt_on_toy2_reports_one_unreachable_token() {
    let dir = TempDir::new().unwrap();
    let toy = toy2(dir.path());
    let out = ok(&["--json", "stt", "--in", s(&toy)]);
    let report = json_stdout(&out);
    assert_eq!(report["count"], 1);
    assert_eq!(report["unreachable"], serde_json::json!(["bc"]));

    let plain = ok(&["stt", "--in", s(&toy)]);
    assert!(String::from_utf8_lossy(&plain.stdout).contains("count: 1"));
}

#[test]
fn help_exits_zero_and_usage_errors_exit_one() {
    assert_eq!(tokforge(&["--help"]).status.code(), Some(0));
    assert_eq!(tokforge(&["stt", "--help"]).status.code(), Some(0));
    assert_eq!(tokforge(&["--bogus"]).status.code(), Some(1));
    assert_eq!(tokforge(&["stt"]).status.code(), Some(1));
    assert_eq!(tokforge(&["inspect", "--in", "x.json", "--vocab", "--graph"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(tokforge(&["stt", "--in", s(&missing)]).status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"type": "WordPiece"}}"#).unwrap();
    let out = tokforge(&["stt", "--in", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn extend_by_zero_is_identity() {
    let dir = TempDir::new().unwrap();
    let (model, corpus) = trained(dir.path());
    let out = dir.path().join("same.json");
    ok(&["extend", "--in", s(&model), "--out", s(&out), "--corpus", s(&corpus), "--n-new", "0"]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn extend_adds_reachable_tokens() {
    let dir = TempDir::new().unwrap();
    let (model, _) = trained(dir.path());
    let other = corpus(dir.path(), "other.txt", 3);
    let out = dir.path().join("ext.json");
    let report = json_stdout(&ok(&[
        "--json", "extend", "--in", s(&model), "--out", s(&out), "--corpus", s(&other), "--n-new", "5",
    ]));
    assert_eq!(report["added"].as_array().map(Vec::len), Some(5), "{report}");
    let stt = json_stdout(&ok(&["--json", "stt", "--in", s(&out)]));
    assert_eq!(stt["count"], 0);
}

#[test]
fn strategy_requires_naive_method() {
    let dir = TempDir::new().unwrap();
    let (model, corpus) = trained(dir.path());
    let out = dir.path().join("x.json");
    let code = tokforge(&[
        "extend", "--in", s(&model), "--out", s(&out), "--corpus", s(&corpus), "--n-new", "1",
        "--strategy", "append",
    ])
    .status
    .code();
    assert_eq!(code, Some(1));
    assert!(!out.exists());
}

#[test]
fn pipeline_matches_prune_then_extend() {
    let dir = TempDir::new().unwrap();
    let (model, corpus) = trained(dir.path());
    let d = dir.path();

    let pipe = d.join("pipe.json");
    ok(&[
        "pipeline", "--in", s(&model), "--out", s(&pipe), "--corpus", s(&corpus), "--seed", "7",
        "--prune-k", "10", "--extend-n", "10",
    ]);

    let pruned = d.join("pruned.json");
    let extended = d.join("extended.json");
    ok(&[
        "prune", "--in", s(&model), "--out", s(&pruned), "--method", "leaf-freq", "--k", "10",
        "--corpus", s(&corpus), "--seed", "7",
    ]);
    ok(&[
        "extend", "--in", s(&pruned), "--out", s(&extended), "--corpus", s(&corpus), "--seed", "7",
        "--n-new", "10",
    ]);
    assert_eq!(std::fs::read(&pipe).unwrap(), std::fs::read(&extended).unwrap());
}

#[test]
fn prune_reports_reachability_and_rejects_large_k() {
    let dir = TempDir::new().unwrap();
    let toy = toy2(dir.path());
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, "abc abc abc abc abc ab c\n").unwrap();
    let out = dir.path().join("p.json");
    let report = json_stdout(&ok(&[
        "--json", "prune", "--in", s(&toy), "--out", s(&out), "--method", "leaf-freq", "--k", "1",
        "--corpus", s(&corpus),
    ]));
    assert_eq!(report["unreachable_before"], 1);
    assert_eq!(report["unreachable_after"], 0);
    assert_eq!(tokforge(&["prune", "--in", s(&toy), "--out", s(&out), "--method", "last-id", "--k", "99"])
        .status
        .code(), Some(1));
}

#[test]
fn eval_writes_csv_and_histogram() {
    let dir = TempDir::new().unwrap();
    let (model, corpus) = trained(dir.path());
    let csv = dir.path().join("m.csv");
    let hist = dir.path().join("h.csv");
    let report = json_stdout(&ok(&[
        "--json", "eval", "--in", s(&model), "--corpus", s(&corpus), "--metrics", "compression,renyi,stt",
        "--csv", s(&csv), "--histogram", s(&hist),
    ]));
    assert!(report.to_string().contains("bytes_per_token"), "{report}");
    let table = std::fs::read_to_string(&csv).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.contains("bytes_per_token") && header.contains("renyi_efficiency"), "{header}");
    assert!(std::fs::metadata(&hist).unwrap().len() > 0);

    let code = tokforge(&["eval", "--in", s(&model), "--corpus", s(&corpus), "--metrics", "unused"]).status.code();
    assert_eq!(code, Some(1));
}

#[test]
fn fvt_transfers_embeddings() {
    let dir = TempDir::new().unwrap();
    let (model, corpus) = trained(dir.path());
    let d = dir.path();
    let ext = d.join("ext.json");
    ok(&["extend", "--in", s(&model), "--out", s(&ext), "--corpus", s(&corpus), "--n-new", "4"]);

    let old = tokforge::load_tokenizer(&model).unwrap();
    let rows = old.vocab_size();
    let emb = EmbeddingMatrix::new(rows, 3, (0..rows * 3).map(|i| i as f32).collect()).unwrap();
    let emb_path = d.join("old.emb");
    emb.write_to(std::fs::File::create(&emb_path).unwrap()).unwrap();

    let out = d.join("new.emb");
    ok(&["fvt", "--old-tok", s(&model), "--new-tok", s(&ext), "--old-emb", s(&emb_path), "--out", s(&out)]);
    let new = EmbeddingMatrix::load(&out).unwrap();
    assert_eq!(new.rows(), rows + 4);
    assert_eq!(new.cols(), 3);
    assert_eq!(&new.data()[..rows * 3], emb.data());
}

#[test]
fn inspect_dumps_json() {
    let dir = TempDir::new().unwrap();
    let toy = toy2(dir.path());
    let summary = json_stdout(&ok(&["--json", "inspect", "--in", s(&toy)]));
    assert_eq!(summary["vocab_size"], 7);
    let vocab = json_stdout(&ok(&["inspect", "--in", s(&toy), "--vocab"]));
    assert!(vocab.to_string().contains("\"bc\""));
    let merges = json_stdout(&ok(&["inspect", "--in", s(&toy), "--merges"]));
    assert_eq!(merges.as_array().map(Vec::len).or_else(|| merges["merges"].as_array().map(Vec::len)), Some(2));
    ok(&["inspect", "--in", s(&toy), "--graph"]);
}
