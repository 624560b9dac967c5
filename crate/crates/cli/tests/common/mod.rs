#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn ncderev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncderev")).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) {
    let out = ncderev(args);
    assert!(
        out.status.success(),
        "ncderev {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small, fast experiment config for pipeline tests.
pub fn small_config(dir: &Path, utterances: usize) -> PathBuf {
    let path = dir.join("config.json");
    let work = dir.join("work");
    let text = format!(
        r#"{{
  "seed": 3,
  "workdir": {work:?},
  "corpus": {{ "synthetic_utterances": {utterances}, "min_secs": 1.5, "max_secs": 2.0 }},
  "rir": {{ "rt60_min": 0.4, "rt60_max": 0.8 }},
  "fir": {{ "p": 2, "q": 2, "grid": [[0, 0], [2, 2], [4, 0]] }},
  "mlp": {{ "p": 2, "q": 2, "hidden": 16, "layers": 2, "epochs": 3, "batch_size": 64 }},
  "mixing": {{ "split": null, "adaptation_utterances": 3, "enhancer_p": 2, "grid": [0.0, 0.5, 1.0] }},
  "diagnose": {{ "max_lag": 40, "spectrograms": 1 }}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

pub const PIPELINE: [&str; 8] =
    ["make-corpus", "fit-fir", "sweep-context", "featurize", "train-mlp", "derev", "mix-sweep", "diagnose"];

/// Runs every command in order with the given config and extra flags.
pub fn run_pipeline(config: &Path, extra: &[&str]) {
    let c = config.to_str().unwrap();
    for cmd in PIPELINE {
        let mut args = vec![cmd, "--config", c];
        args.extend_from_slice(extra);
        ok(&args);
    }
}

/// Relative path to bytes for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
