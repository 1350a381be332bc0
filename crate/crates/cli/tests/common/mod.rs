#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const PATHS: &str = r#"
[paths]
sessions = "data/sessions.jsonl"
snippets = "data/snippets.jsonl"
judgments = "data/judgments.jsonl"
params = "data/params.json"
models = "models"
outputs = "outputs"
"#;

/// A small corpus that runs the whole pipeline in a few seconds.
pub const TINY: &str = r#"
[synth]
head_queries = 60
tail_queries = 40
sessions_per_query = 120

[gbrank]
num_trees = 25
min_samples_leaf = 10
"#;

pub fn write_config(dir: &Path, seed: u64, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("seed = {seed}\n{PATHS}\n{body}")).unwrap();
    path
}

pub fn tailrank(config: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_tailrank"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    out
}

pub fn run_ok(config: &Path, args: &[&str]) {
    let out = tailrank(config, args);
    assert!(
        out.status.success(),
        "tailrank {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every regular file under `dir`, relative path to contents.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
