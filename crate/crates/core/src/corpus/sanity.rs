//! Synthetic labeled corpus for desk-scale checks: controls are sampled from
//! the intact model and cases from the degraded one, from the same prompt
//! pool.
//!
//! MMSE values are synthetic. Each participant gets
//! `center - slope * z + noise`, rounded and clamped to 0–30, where `z` is the
//! standardized paired ratio of its transcript and `noise` is seeded normal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Corpus, Exclusion, Label, PreprocessConfig, Preprocessor, Transcript};
use crate::engine::TensorArchive;
use crate::error::{Error, Result};
use crate::scoring::transcript_ppl;
use crate::tensor::Scalar;
use crate::textlab::generate::{sample, GenConfig};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SanityConfig {
    pub n_per_class: usize,
    pub seed: u64,
    /// Sampling settings; `beams`, `n_return` and `seed` are ignored.
    pub gen: GenConfig,
    pub mmse_center: f64,
    pub mmse_slope: f64,
    pub mmse_noise_sd: f64,
}

impl Default for SanityConfig {
    fn default() -> Self {
        SanityConfig {
            n_per_class: 20,
            seed: 0,
            gen: GenConfig::default(),
            mmse_center: 24.0,
            mmse_slope: 3.0,
            mmse_noise_sd: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanityBuild {
    pub corpus: Corpus,
    /// Items that produced no usable text; each reduces its class count.
    pub failures: Vec<Exclusion>,
    /// `(participant id, ppl_base / ppl_degraded)` used for the synthetic MMSE.
    pub ratios: Vec<(String, f64)>,
}

struct Item {
    id: String,
    label: Label,
    prompt_index: usize,
    seed: u64,
}

/// Maps standardized ratios to synthetic MMSE values.
pub fn synthetic_mmse(ratios: &[f64], cfg: &SanityConfig) -> Result<Vec<u8>> {
    if ratios.is_empty() {
        return Ok(Vec::new());
    }
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let noise = Normal::new(0.0, cfg.mmse_noise_sd).map_err(|e| Error::InvalidSpec {
        field: "mmse_noise_sd",
        reason: e.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6d_7365);
    Ok(ratios
        .iter()
        .map(|r| {
            let z = if sd > 0.0 { (r - mean) / sd } else { 0.0 };
            let v = cfg.mmse_center - cfg.mmse_slope * z + noise.sample(&mut rng);
            v.round().clamp(0.0, 30.0) as u8
        })
        .collect())
}

/// Builds the corpus. Control `i` and case `i` both continue
/// `prompts[i % prompts.len()]`; only the continuation is kept as the
/// transcript.
pub fn build_sanity_corpus<T: Scalar>(
    base: &TensorArchive<T>,
    degraded: &TensorArchive<T>,
    tokenizer: &Tokenizer,
    prompts: &[String],
    cfg: &SanityConfig,
) -> Result<SanityBuild> {
    if prompts.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    if cfg.n_per_class == 0 {
        return Err(Error::InvalidSpec {
            field: "n_per_class",
            reason: "must be at least 1".into(),
        });
    }
    cfg.gen.validate()?;
    let encoded: Vec<Vec<u32>> = prompts.iter().map(|p| tokenizer.encode(p).ids).collect();
    if encoded.iter().any(|ids| ids.is_empty()) {
        return Err(Error::EmptyPrompt);
    }

    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items = Vec::with_capacity(2 * cfg.n_per_class);
    for (prefix, label) in [("ctl", Label::Control), ("dem", Label::Dementia)] {
        for i in 0..cfg.n_per_class {
            items.push(Item {
                id: format!("{prefix}-{i:03}"),
                label,
                prompt_index: i % prompts.len(),
                seed: seeds.gen(),
            });
        }
    }

    let pre = Preprocessor::new(PreprocessConfig::default()).expect("default patterns compile");
    let outcomes: Vec<std::result::Result<Transcript, Exclusion>> = items
        .par_iter()
        .map(|item| {
            let model = if item.label == Label::Control { base } else { degraded };
            let fail = |reason: String| Exclusion {
                participant_id: item.id.clone(),
                transcript_id: item.id.clone(),
                reason,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(item.seed);
            let h = sample(&encoded[item.prompt_index], model, &cfg.gen, &mut rng)
                .map_err(|e| fail(format!("generation failed: {e}")))?;
            let raw = tokenizer
                .decode(&h.tokens)
                .map_err(|e| fail(format!("decoding failed: {e}")))?;
            let clean = pre.clean(&raw);
            if tokenizer.encode(&clean).ids.is_empty() {
                return Err(fail("continuation is empty after preprocessing".into()));
            }
            Ok(Transcript {
                participant_id: item.id.clone(),
                transcript_id: item.id.clone(),
                raw_text: raw,
                clean_text: clean,
                label: item.label,
                mmse: None,
                source: format!(
                    "generated by {} model from prompt {}",
                    if item.label == Label::Control { "base" } else { "degraded" },
                    item.prompt_index
                ),
            })
        })
        .collect();

    let mut transcripts = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(t) => transcripts.push(t),
            Err(e) => failures.push(e),
        }
    }

    let ratio_of = |t: &Transcript| -> Result<f64> {
        Ok(transcript_ppl(t, tokenizer, base)? / transcript_ppl(t, tokenizer, degraded)?)
    };
    let ratio_values: Vec<f64> = transcripts.par_iter().map(ratio_of).collect::<Result<_>>()?;
    let mmse = synthetic_mmse(&ratio_values, cfg)?;
    for (t, m) in transcripts.iter_mut().zip(&mmse) {
        t.mmse = Some(*m);
    }
    let ratios = transcripts
        .iter()
        .map(|t| t.participant_id.clone())
        .zip(ratio_values)
        .collect();

    let provenance = vec![
        "synthetic sanity corpus: controls sampled from the base model, cases from the degraded model".to_string(),
        format!(
            "synthetic MMSE (not clinical): round({} - {} * z(ratio) + N(0, {}^2)) clamped to 0-30",
            cfg.mmse_center, cfg.mmse_slope, cfg.mmse_noise_sd
        ),
        format!("seed {}", cfg.seed),
        format!(
            "sampling: top_p {} repetition_penalty {} min_new_tokens {} max_new_tokens {}",
            cfg.gen.top_p, cfg.gen.repetition_penalty, cfg.gen.min_new_tokens, cfg.gen.max_new_tokens
        ),
        format!("generation failures: {}", failures.len()),
    ];
    let corpus = Corpus::new(format!("sanity-{}", cfg.seed), transcripts, provenance, pre.config().clone())?;
    Ok(SanityBuild {
        corpus,
        failures,
        ratios,
    })
}
