mod common;

use std::fs;

use common::*;
use tempfile::tempdir;

fn json(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn degrade_writes_archive_report_and_manifest() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 1);
    let out = t.path().join("d");
    let o = ok(&["degrade", "--model", p(&model), "--layers", "0-8", "--out", p(&out)]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("h.0.attn.c_attn.weight"));
    let report = json(&out.join("mask_report.json"));
    assert_eq!(report["manifest"], "run_manifest.json");
    let tensors = report["tensors"].as_array().unwrap();
    assert_eq!(tensors.len(), 9);
    // d=4, two heads of width 2: the first column of each head's value block.
    assert_eq!(tensors[0]["ranges"], serde_json::json!([[8, 9], [10, 11]]));
    let m = json(&out.join("run_manifest.json"));
    assert_eq!(m["command"], "degrade");
    assert!(m["config"].get("out").is_none());
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap())
        .collect();
    assert_eq!(outputs, ["model.safetensors", "config.json", "mask_report.json"]);
    assert_eq!(m["started_at"], 1_700_000_000u64);

    // The written checkpoint loads and has the masked columns zeroed.
    let a = gptd::engine::TensorArchive::load_dir(&out).unwrap();
    let w = &a.get("h.3.attn.c_attn.weight").unwrap().data;
    assert!((0..4).all(|r| w[r * 12 + 8] == 0.0 && w[r * 12 + 10] == 0.0));
    assert!((0..4).any(|r| w[r * 12 + 9] != 0.0));
}

#[test]
fn degrade_rejects_bad_layer_naming_the_field() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 1);
    let o = gptd(&["degrade", "--model", p(&model), "--layers", "3,15", "--out", p(&t.path().join("d"))]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("layers") && err.contains("15"), "{err}");
}

#[test]
fn identity_spec_scores_unit_ratios_and_reports_exclusions() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 2);
    let corpus = write_corpus(
        &t.path().join("c.jsonl"),
        &[
            Rec { pid: "a", label: "dementia", mmse: Some(20), text: TEXTS[0] },
            Rec { pid: "b", label: "control", mmse: Some(29), text: TEXTS[1] },
            Rec { pid: "e", label: "control", mmse: None, text: "" },
        ],
    );
    let out = t.path().join("s");
    let o = ok(&["score", "--model", p(&model), "--corpus", p(&corpus), "--layers", "none", "--out", p(&out)]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("excluded") && err.contains("e-2"), "{err}");
    let table = json(&out.join("scores.json"));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r["ratio"], 1.0);
    }
    let tsv = fs::read_to_string(out.join("scores.tsv")).unwrap();
    assert!(tsv.starts_with("# manifest: run_manifest.json\nparticipant_id\t"));
}

#[test]
fn eval_on_single_class_scores_fails() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 3);
    let corpus = labeled_corpus(&t.path().join("c.jsonl"), 0, 3);
    let s = t.path().join("s");
    ok(&["score", "--model", p(&model), "--corpus", p(&corpus), "--layers", "0-2", "--out", p(&s)]);
    let o = gptd(&["eval", "--scores", p(&s.join("scores.json")), "--out", p(&t.path().join("e"))]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("AUC"), "{err}");
}

#[test]
fn eval_reports_metrics() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 3);
    let corpus = labeled_corpus(&t.path().join("c.jsonl"), 3, 3);
    let s = t.path().join("s");
    ok(&["score", "--model", p(&model), "--corpus", p(&corpus), "--layers", "0-8", "--out", p(&s)]);
    let e = t.path().join("e");
    ok(&["eval", "--scores", p(&s.join("scores.json")), "--out", p(&e)]);
    let r = json(&e.join("eval.json"));
    let auc = r["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(r["n_cases"], 3);
    assert!(r["pearson_mmse"].is_f64());
}

#[test]
fn combination_search_writes_every_subset() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 4);
    let recs: Vec<Rec> = ["a", "b", "c", "d", "e", "f"]
        .iter()
        .enumerate()
        .map(|(i, id)| Rec {
            pid: id,
            label: if i < 3 { "dementia" } else { "control" },
            mmse: None,
            text: ["the boy", "a jar", "water", "the girl", "a stool", "dishes"][i],
        })
        .collect();
    let corpus = write_corpus(&t.path().join("c.jsonl"), &recs);
    let out = t.path().join("s");
    ok(&["search", "--model", p(&model), "--corpus", p(&corpus), "--strategy", "combination", "--out", p(&out)]);
    let tsv = fs::read_to_string(out.join("search.tsv")).unwrap();
    // manifest line + header + 4096 patterns
    assert_eq!(tsv.lines().count(), 2 + 4096);
    let r = json(&out.join("search.json"));
    assert_eq!(r["ranked"][0]["rank"], 1);
    assert_eq!(r["n_participants"], 6);
}

#[test]
fn cv_reruns_identically() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 5);
    let corpus = labeled_corpus(&t.path().join("c.jsonl"), 5, 5);
    let run = |dir: &str| {
        let out = t.path().join(dir);
        ok(&[
            "cv", "--model", p(&model), "--corpus", p(&corpus), "--strategy", "cumulative", "--folds", "5",
            "--seed", "11", "--out", p(&out),
        ]);
        snapshot(&out)
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let cv: serde_json::Value = serde_json::from_slice(&a["cv.json"]).unwrap();
    assert_eq!(cv["folds"].as_array().unwrap().len(), 5);
}

#[test]
fn generate_pairs_each_prompt_and_lexstats_needs_a_table() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 6);
    let prompts = t.path().join("prompts.txt");
    fs::write(&prompts, "The boy is on the stool.\n\nThe mother is at the sink.\n").unwrap();
    let g = t.path().join("g");
    ok(&[
        "generate", "--model", p(&model), "--layers", "0-8", "--prompts", p(&prompts), "--beams", "2",
        "--n-return", "2", "--min-new-tokens", "3", "--max-new-tokens", "6", "--out", p(&g),
    ]);
    let gen = json(&g.join("generations.json"));
    assert_eq!(gen["rows"].as_array().unwrap().len(), 2);
    assert_eq!(gen["config"]["beams"], 2);

    let missing = gptd(&[
        "lexstats", "--generations", p(&g.join("generations.json")), "--freq-table",
        p(&t.path().join("nope.tsv")), "--out", p(&t.path().join("l")),
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.tsv"));
}

#[test]
fn lexstats_reads_generations_and_table() {
    let t = tempdir().unwrap();
    let gen = serde_json::json!({
        "config": gptd::textlab::GenConfig::default(),
        "rows": [{
            "prompt": "p",
            "rank": 1,
            "base": "the cat sat on a mat near a dog",
            "degraded": "the cat the cat the cat",
            "base_candidates": [],
            "degraded_candidates": [],
            "failure": null
        }, {
            "prompt": "q",
            "rank": 1,
            "base": "a mat and a dog and a bird",
            "degraded": "cat cat dog",
            "base_candidates": [],
            "degraded_candidates": [],
            "failure": null
        }]
    });
    let gpath = t.path().join("generations.json");
    fs::write(&gpath, gen.to_string()).unwrap();
    let table = t.path().join("freq.tsv");
    fs::write(&table, "Word\tFREQcount\ncat\t5000\nmat\t300\ndog\t4000\nsat\t700\nnear\t900\nbird\t800\n").unwrap();
    let out = t.path().join("l");
    ok(&["lexstats", "--generations", p(&gpath), "--freq-table", p(&table), "--out", p(&out)]);
    let r = json(&out.join("lexstats.json"));
    assert!(r["degraded"]["ttr"].as_f64().unwrap() < r["base"]["ttr"].as_f64().unwrap());
}

#[test]
fn saliency_on_one_token_prompt_is_all_on_that_token() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 7);
    let out = t.path().join("s");
    ok(&["saliency", "--model", p(&model), "--prompt", "Hello", "--out", p(&out)]);
    let r = json(&out.join("saliency.json"));
    assert_eq!(r["maps"][0]["percentages"], serde_json::json!([100.0]));
    assert!(fs::read_to_string(out.join("saliency.html")).unwrap().contains("<span"));
}

#[test]
fn saliency_with_identical_models_aligns_on_first_prompt() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 7);
    let out = t.path().join("s");
    ok(&[
        "saliency", "--model", p(&model), "--layers", "none", "--prompt", "The boy", "--prompt", "A girl",
        "--out", p(&out),
    ]);
    let r = json(&out.join("saliency.json"));
    assert_eq!(r["outcome"], "aligned");
    assert_eq!(r["prompt_index"], 0);
    assert_eq!(r["base"]["percentages"], r["degraded"]["percentages"]);
}

#[test]
fn sanity_corpus_has_requested_classes_and_is_seeded() {
    let t = tempdir().unwrap();
    let model = write_model(&t.path().join("m"), narrow_config(), 8);
    let run = |dir: &str, seed: &str| {
        let out = t.path().join(dir);
        ok(&[
            "make-sanity-corpus", "--model", p(&model), "--layers", "0-8", "--n-per-class", "3", "--seed", seed,
            "--min-new-tokens", "4", "--max-new-tokens", "8", "--out", p(&out),
        ]);
        out
    };
    let a = run("a", "1");
    let c = gptd::corpus::Corpus::open(&a).unwrap();
    let counts = c.class_counts();
    let failures = json(&a.join("failures.json"))["failures"].as_array().unwrap().len();
    assert_eq!(counts.control + counts.dementia + failures, 6);
    assert!(c.provenance.iter().any(|l| l.contains("synthetic MMSE")));
    assert_eq!(snapshot(&a), snapshot(&run("b", "1")));
    assert_ne!(snapshot(&a)["transcripts.jsonl"], snapshot(&run("c", "2"))["transcripts.jsonl"]);

    // The written corpus feeds straight into scoring.
    let s = t.path().join("s");
    ok(&["score", "--model", p(&model), "--corpus", p(&a), "--layers", "0-8", "--out", p(&s)]);
    assert_eq!(json(&s.join("scores.json"))["rows"].as_array().unwrap().len(), 6 - failures);
}

#[test]
fn missing_model_is_an_error() {
    let t = tempdir().unwrap();
    let o = gptd(&["score", "--corpus", "x.jsonl", "--layers", "0", "--out", p(t.path())]);
    assert!(!o.status.success());
}
