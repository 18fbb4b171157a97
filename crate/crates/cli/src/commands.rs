use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gptd::corpus::sanity::{build_sanity_corpus, SanityConfig};
use gptd::corpus::{Corpus, Exclusion};
use gptd::evalkit::{cross_dataset, cross_validate, evaluate, search_patterns};
use gptd::scoring::{score_corpus, PairedScorer, ScoreTable};
use gptd::surgery::{degrade, Strategy};
use gptd::textlab::generate::paired_generate;
use gptd::textlab::lexical::{lexical_stats, FrequencyTable, LexConfig};
use gptd::textlab::saliency::{aligned_saliency, html_page, saliency_text, Alignment, SaliencyMap};
use gptd::textlab::{render_generations, GenConfig, PairedGeneration};
use gptd::tokenizer::Tokenizer;

use crate::opts::{
    read_prompts, Degraded, GenArgs, MaskArgs, ModelArgs, PairArgs, SpecArgs, COOKIE_THEFT_PROMPTS,
    PICTURE_PROMPTS,
};
use crate::output::{read_json, Output};

/// Arguments as recorded in the manifest: everything but the output path.
fn config_of<T: Serialize>(args: &T) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(args)?;
    if let Some(m) = v.as_object_mut() {
        m.remove("out");
    }
    Ok(v)
}

fn load_corpus(path: &std::path::Path, out: &mut Output) -> Result<Corpus> {
    out.input(path)?;
    Corpus::open(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn report_exclusions(excluded: &[Exclusion]) {
    if !excluded.is_empty() {
        eprintln!("excluded {} transcript(s):", excluded.len());
        for e in excluded {
            eprintln!("  {} / {}: {}", e.participant_id, e.transcript_id, e.reason);
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct DegradeCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Output directory for model.safetensors, config.json and mask_report.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_degrade(a: DegradeCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "degrade", config_of(&a)?)?;
    let spec = a.spec.require(Some(&mut out))?;
    out.resolved("spec", &spec)?;
    let base = a.model.load(&mut out)?;
    let (w, report) = degrade(&base, &spec)?;
    drop(base);
    out.bytes("model.safetensors", &w.to_safetensors_bytes()?)?;
    let mut cfg = serde_json::to_string_pretty(&w.config)?;
    cfg.push('\n');
    out.bytes("config.json", cfg.as_bytes())?;
    out.json("mask_report.json", &report)?;
    out.finish()?;
    for t in &report.tensors {
        let ranges: Vec<String> = t.ranges.iter().map(|(a, b)| format!("{a}..{b}")).collect();
        println!("{} {:?} {}", t.tensor, t.axis, ranges.join(","));
    }
    println!("parameters zeroed: {}", report.total_parameters_zeroed);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct ScoreCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    /// Corpus directory, .jsonl file, or CHAT file/directory.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_score(a: ScoreCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "score", config_of(&a)?)?;
    let tok = a.model.tokenizer(&mut out)?;
    let base = a.model.load(&mut out)?;
    let corpus = load_corpus(&a.corpus, &mut out)?;
    let table = match a.pair.resolve(&mut out)? {
        Some(Degraded::Spec(spec)) => PairedScorer::new(&corpus, &tok, &base, false)?.score_with_spec(&spec)?,
        Some(Degraded::Archive(d)) => score_corpus(&corpus, &tok, &base, &d, None)?,
        None => bail!("no degraded model given: pass --degraded, --layers, --location embedding or --spec"),
    };
    report_exclusions(&corpus.excluded);
    report_exclusions(&table.excluded);
    out.text("scores.tsv", &table.to_tsv())?;
    out.json("scores.json", &table)?;
    out.finish()?;
    eprintln!("scored {} participant(s)", table.rows.len());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct EvalCmd {
    /// scores.json written by `gptd score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval(a: EvalCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "eval", config_of(&a)?)?;
    out.input(&a.scores)?;
    let table: ScoreTable = read_json(&a.scores)?;
    let report = evaluate(&table.rows, &table.corpus_id, table.spec)?;
    out.json("eval.json", &report)?;
    out.text("eval.txt", &report.render())?;
    out.finish()?;
    print!("{}", report.render());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct SearchArgs {
    /// individual, cumulative or combination.
    #[arg(long, default_value = "combination")]
    pub strategy: Strategy,
    #[command(flatten)]
    pub mask: MaskArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct SearchCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Corpus directory, .jsonl file, or CHAT file/directory.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Patterns shown in search.txt.
    #[arg(long, default_value_t = 20)]
    pub top: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_search(a: SearchCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "search", config_of(&a)?)?;
    let tok = a.model.tokenizer(&mut out)?;
    let base = a.model.load(&mut out)?;
    let corpus = load_corpus(&a.corpus, &mut out)?;
    let base_spec = a.search.mask.base_spec();
    out.resolved("base_spec", &base_spec)?;
    let scorer = PairedScorer::new(&corpus, &tok, &base, true)?;
    let res = search_patterns(&scorer, a.search.strategy, &base_spec)?;
    out.text("search.tsv", &res.to_tsv())?;
    out.json("search.json", &res)?;
    out.text("search.txt", &res.render(a.top))?;
    out.finish()?;
    print!("{}", res.render(a.top));
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct CvCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Corpus directory, .jsonl file, or CHAT file/directory.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Fold assignment seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_cv(a: CvCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "cv", config_of(&a)?)?;
    out.seed("folds", a.seed);
    let tok = a.model.tokenizer(&mut out)?;
    let base = a.model.load(&mut out)?;
    let corpus = load_corpus(&a.corpus, &mut out)?;
    let base_spec = a.search.mask.base_spec();
    out.resolved("base_spec", &base_spec)?;
    let scorer = PairedScorer::new(&corpus, &tok, &base, true)?;
    let res = cross_validate(&scorer, a.folds, a.seed, a.search.strategy, &base_spec)?;
    out.json("cv.json", &res)?;
    out.text("cv.tsv", &res.to_tsv())?;
    out.text("cv.txt", &res.render())?;
    out.finish()?;
    print!("{}", res.render());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct CrossDatasetCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Corpus the pattern search runs on.
    #[arg(long)]
    pub train_corpus: PathBuf,
    /// Corpus scored under the winning pattern.
    #[arg(long)]
    pub test_corpus: PathBuf,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_crossdataset(a: CrossDatasetCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "crossdataset", config_of(&a)?)?;
    let tok = a.model.tokenizer(&mut out)?;
    let base = a.model.load(&mut out)?;
    let train = load_corpus(&a.train_corpus, &mut out)?;
    let test = load_corpus(&a.test_corpus, &mut out)?;
    let base_spec = a.search.mask.base_spec();
    out.resolved("base_spec", &base_spec)?;
    let train_scorer = PairedScorer::new(&train, &tok, &base, true)?;
    let test_scorer = PairedScorer::new(&test, &tok, &base, true)?;
    let res = cross_dataset(&train_scorer, &test_scorer, a.search.strategy, &base_spec)?;
    out.json("crossdataset.json", &res)?;
    out.text("crossdataset.txt", &res.render())?;
    out.finish()?;
    print!("{}", res.render());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generations {
    pub config: GenConfig,
    pub rows: Vec<PairedGeneration>,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    /// One prompt per line [default: bundled cookie-theft sentences].
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_generate(a: GenerateCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "generate", config_of(&a)?)?;
    let cfg = a.gen.config()?;
    out.resolved("gen", &cfg)?;
    let tok = a.model.tokenizer(&mut out)?;
    let tok: &Tokenizer = &tok;
    let prompts = read_prompts(a.prompts.as_deref(), COOKIE_THEFT_PROMPTS, &mut out)?;
    let base = a.model.load(&mut out)?;
    let degraded = a.pair.weights(&base, &mut out)?;
    let rows = prompts
        .par_iter()
        .map(|p| paired_generate(p, tok, &base, &degraded, &cfg))
        .collect::<gptd::Result<Vec<_>>>()?;
    for r in &rows {
        if let Some(f) = &r.failure {
            eprintln!("prompt {:?}: {f}", r.prompt);
        }
    }
    let g = Generations { config: cfg, rows };
    out.json("generations.json", &g)?;
    out.text("generations.txt", &render_generations(&g.rows, &cfg))?;
    out.finish()?;
    print!("{}", render_generations(&g.rows, &cfg));
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct LexstatsCmd {
    /// generations.json written by `gptd generate`.
    #[arg(long)]
    pub generations: PathBuf,
    /// Word-frequency table (tab or comma separated, with a Word column and
    /// a FREQcount/count column).
    #[arg(long)]
    pub freq_table: PathBuf,
    /// `e`, `10`, `2` or any base > 1.
    #[arg(long, default_value = "e")]
    pub log_base: String,
    /// Use counts per million instead of raw counts.
    #[arg(long)]
    pub per_million: bool,
    /// Replacement stopword list, one word per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_log_base(s: &str) -> Result<f64> {
    let b = if s == "e" {
        std::f64::consts::E
    } else {
        s.parse::<f64>().with_context(|| format!("bad log base `{s}`"))?
    };
    if !(b > 1.0 && b.is_finite()) {
        bail!("log base must exceed 1, got {s}");
    }
    Ok(b)
}

pub fn cmd_lexstats(a: LexstatsCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "lexstats", config_of(&a)?)?;
    out.input(&a.generations)?;
    let g: Generations = read_json(&a.generations)?;
    out.input(&a.freq_table)?;
    let table = FrequencyTable::load(&a.freq_table)
        .with_context(|| format!("loading frequency table {}", a.freq_table.display()))?;
    let mut cfg = match &a.stopwords {
        Some(p) => {
            out.input(p)?;
            let s = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            LexConfig::with_stopwords(
                s.lines()
                    .map(|l| l.trim().to_lowercase())
                    .filter(|l| !l.is_empty()),
            )
        }
        None => LexConfig::default(),
    };
    cfg.log_base = parse_log_base(&a.log_base)?;
    cfg.per_million = a.per_million;
    let (base, degraded): (Vec<String>, Vec<String>) = g
        .rows
        .iter()
        .filter_map(|r| Some((r.base.clone()?, r.degraded.clone()?)))
        .unzip();
    if base.is_empty() {
        bail!("no prompt has a paired base/degraded output");
    }
    let report = lexical_stats(&base, &degraded, &table, &cfg)?;
    out.json("lexstats.json", &report)?;
    out.text("lexstats.txt", &report.render())?;
    out.finish()?;
    print!("{}", report.render());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMaps {
    pub maps: Vec<SaliencyMap>,
}

#[derive(Args, Debug, Serialize)]
pub struct SaliencyCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    /// With a degraded model, maps are drawn for the first prompt on which
    /// both models predict the same next token; without one, for every
    /// prompt under the base model.
    #[command(flatten)]
    pub pair: PairArgs,
    /// A prompt (repeatable); overrides --prompts.
    #[arg(long)]
    pub prompt: Vec<String>,
    /// One prompt per line [default: bundled cookie-theft sentences].
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_saliency(a: SaliencyCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "saliency", config_of(&a)?)?;
    let tok = a.model.tokenizer(&mut out)?;
    let prompts = if a.prompt.is_empty() {
        read_prompts(a.prompts.as_deref(), COOKIE_THEFT_PROMPTS, &mut out)?
    } else {
        a.prompt.clone()
    };
    let base = a.model.load(&mut out)?;
    let text = match a.pair.resolve(&mut out)? {
        Some(d) => {
            let degraded = d.weights(&base)?;
            let al = aligned_saliency(&prompts, &tok, &base, &degraded)?;
            out.json("saliency.json", &al)?;
            match &al {
                Alignment::Aligned {
                    prompt,
                    base,
                    degraded,
                    ..
                } => {
                    out.html("saliency.html", &html_page(&[base, degraded]))?;
                    format!("prompt: {prompt}\n{}\n{}", base.render(), degraded.render())
                }
                Alignment::NoAlignment { predictions } => {
                    let mut s = String::from("no prompt gives both models the same next token\n");
                    for (p, b, d) in predictions {
                        s.push_str(&format!("{p:?}: base {b:?}, degraded {d:?}\n"));
                    }
                    s
                }
            }
        }
        None => {
            let maps = prompts
                .iter()
                .map(|p| saliency_text(p, &tok, &base, "base"))
                .collect::<gptd::Result<Vec<_>>>()?;
            out.html("saliency.html", &html_page(&maps.iter().collect::<Vec<_>>()))?;
            let s = maps.iter().map(SaliencyMap::render).collect::<Vec<_>>().join("\n");
            out.json("saliency.json", &SaliencyMaps { maps })?;
            s
        }
    };
    out.text("saliency.txt", &text)?;
    out.finish()?;
    print!("{text}");
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct SanityCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    /// One prompt per line [default: bundled picture-description prompts].
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub n_per_class: usize,
    /// Sampling settings; `--seed` seeds the whole corpus.
    #[command(flatten)]
    pub gen: GenArgs,
    /// Corpus directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Failures<'a> {
    failures: &'a [Exclusion],
}

pub fn cmd_make_sanity_corpus(a: SanityCmd) -> Result<()> {
    let mut out = Output::new(&a.out, "make-sanity-corpus", config_of(&a)?)?;
    out.seed("corpus", a.gen.seed);
    let cfg = SanityConfig {
        n_per_class: a.n_per_class,
        seed: a.gen.seed,
        gen: a.gen.config()?,
        ..SanityConfig::default()
    };
    out.resolved("sanity", &cfg)?;
    let tok = a.model.tokenizer(&mut out)?;
    let prompts = read_prompts(a.prompts.as_deref(), PICTURE_PROMPTS, &mut out)?;
    let base = a.model.load(&mut out)?;
    let degraded = a.pair.weights(&base, &mut out)?;
    let build = build_sanity_corpus(&base, &degraded, &tok, &prompts, &cfg)?;
    build.corpus.save_dir(out.dir())?;
    out.record("manifest.json")?;
    out.record("transcripts.jsonl")?;
    out.json("failures.json", &Failures { failures: &build.failures })?;
    let mut tsv = String::from("participant_id\tratio\n");
    for (id, r) in &build.ratios {
        tsv.push_str(&format!("{id}\t{r}\n"));
    }
    out.text("ratios.tsv", &tsv)?;
    out.finish()?;
    let c = build.corpus.class_counts();
    println!("transcripts: {} control, {} dementia", c.control, c.dementia);
    if !build.failures.is_empty() {
        eprintln!("{} generation failure(s):", build.failures.len());
        for f in &build.failures {
            eprintln!("  {}: {}", f.participant_id, f.reason);
        }
    }
    Ok(())
}
