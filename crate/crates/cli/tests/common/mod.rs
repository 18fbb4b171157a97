#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gptd::engine::synthetic::random_archive;
use gptd::engine::ModelConfig;

/// 12 layers like GPT-2 small, but narrow enough for exhaustive searches.
pub fn narrow_config() -> ModelConfig {
    ModelConfig {
        n_layers: 12,
        n_heads: 2,
        d_model: 4,
        vocab_size: 50257,
        context_window: 64,
        ln_eps: 1e-5,
        eos_token_id: 50256,
    }
}

pub fn write_model(dir: &Path, cfg: ModelConfig, seed: u64) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let a = random_archive(cfg, seed, 0.5);
    a.save(&dir.join("model.safetensors")).unwrap();
    fs::write(dir.join("config.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    dir.to_path_buf()
}

pub struct Rec<'a> {
    pub pid: &'a str,
    pub label: &'a str,
    pub mmse: Option<u8>,
    pub text: &'a str,
}

pub fn write_corpus(path: &Path, recs: &[Rec]) -> PathBuf {
    let mut s = String::new();
    for (i, r) in recs.iter().enumerate() {
        let v = serde_json::json!({
            "transcript_id": format!("{}-{i}", r.pid),
            "participant_id": r.pid,
            "label": r.label,
            "mmse": r.mmse,
            "text": r.text,
        });
        s.push_str(&v.to_string());
        s.push('\n');
    }
    fs::write(path, s).unwrap();
    path.to_path_buf()
}

pub const TEXTS: &[&str] = &[
    "the boy is on the stool",
    "mother is drying dishes",
    "water is spilling on the floor",
    "the girl wants a cookie",
    "the stool is falling over",
    "there is a window and a garden",
    "the jar is up in the cupboard",
    "she does not see the water",
];

/// `n_case` dementia and `n_ctl` control participants, one transcript each.
pub fn labeled_corpus(path: &Path, n_case: usize, n_ctl: usize) -> PathBuf {
    let ids: Vec<String> = (0..n_case + n_ctl).map(|i| format!("p{i:02}")).collect();
    let recs: Vec<Rec> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| Rec {
            pid: id,
            label: if i < n_case { "dementia" } else { "control" },
            mmse: Some(if i < n_case { 18 + i as u8 } else { 27 + (i % 3) as u8 }),
            text: TEXTS[i % TEXTS.len()],
        })
        .collect();
    write_corpus(path, &recs)
}

pub fn gptd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gptd"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("GPTD_MODEL_DIR")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let o = gptd(args);
    assert!(
        o.status.success(),
        "gptd {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}
