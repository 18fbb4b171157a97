//! Parity against fixtures produced by tools/make_goldens.py.

use std::path::PathBuf;

use gptd::engine::synthetic::random_archive;
use gptd::engine::{forward_logprobs_ids, ModelConfig, TensorArchive};
use gptd::textlab::lexical::welch_t_test;
use gptd::tokenizer::Tokenizer;
use serde::Deserialize;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Deserialize)]
struct TokCase {
    text: String,
    ids: Vec<u32>,
}

#[derive(Deserialize)]
struct Probe {
    text: String,
    ids: Vec<u32>,
    logprobs: Vec<f64>,
    nll: f64,
}

#[derive(Deserialize)]
struct EngineGolden {
    seed: u64,
    scale: f32,
    total_nll: f64,
    probes: Vec<Probe>,
}

#[derive(Deserialize)]
struct WelchCase {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Deserialize)]
struct WelchGolden {
    cases: Vec<WelchCase>,
}

fn read<T: serde::de::DeserializeOwned>(name: &str) -> T {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

#[test]
fn tokenizer_matches_reference_on_all_golden_sentences() {
    let tok = Tokenizer::bundled();
    let text = std::fs::read_to_string(fixture("tokenizer_golden.jsonl")).unwrap();
    let cases: Vec<TokCase> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 200);
    for c in &cases {
        assert_eq!(tok.encode(&c.text).ids, c.ids, "encoding {:?}", c.text);
        assert_eq!(tok.decode(&c.ids).unwrap(), c.text, "decoding {:?}", c.text);
    }
}

fn check_engine<T: gptd::tensor::Scalar>(a: &TensorArchive<T>, g: &EngineGolden, per_token_tol: f64, total_rel_tol: f64) {
    let tok = Tokenizer::bundled();
    let mut total = 0.0;
    for p in &g.probes {
        assert_eq!(tok.encode(&p.text).ids, p.ids);
        let trace = forward_logprobs_ids(&p.ids, a).unwrap();
        assert_eq!(trace.len(), p.logprobs.len());
        for (i, (ours, theirs)) in trace.logprobs.iter().zip(&p.logprobs).enumerate() {
            assert!(
                (ours - theirs).abs() <= per_token_tol * theirs.abs().max(1.0),
                "{:?} token {i}: {ours} vs {theirs}",
                p.text
            );
        }
        assert!((trace.nll - p.nll).abs() <= total_rel_tol * p.nll, "{}: {} vs {}", p.text, trace.nll, p.nll);
        total += trace.nll;
    }
    assert!((total - g.total_nll).abs() <= total_rel_tol * g.total_nll, "{total} vs {}", g.total_nll);
}

#[test]
fn engine_matches_reference_gpt2_in_f32_and_f64() {
    let g: EngineGolden = read("engine_golden.json");
    let a = random_archive(ModelConfig::gpt2_small(), g.seed, g.scale);
    check_engine(&a, &g, 5e-3, 5e-3);
    let a64: TensorArchive<f64> = a.cast();
    drop(a);
    check_engine(&a64, &g, 1e-8, 1e-10);
}

#[test]
fn welch_matches_scipy() {
    let g: WelchGolden = read("welch_golden.json");
    for c in &g.cases {
        let w = welch_t_test(&c.a, &c.b).unwrap();
        assert!((w.t - c.t).abs() <= 1e-9 * c.t.abs().max(1.0), "t {} vs {}", w.t, c.t);
        assert!((w.df - c.df).abs() <= 1e-9 * c.df.abs().max(1.0), "df {} vs {}", w.df, c.df);
        assert!((w.p - c.p).abs() <= 1e-9, "p {} vs {}", w.p, c.p);
    }
}
