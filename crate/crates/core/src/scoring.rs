//! Transcript perplexity and the paired (intact vs degraded) score per
//! participant.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Exclusion, Label, Transcript};
use crate::engine::forward::{logprobs_from_layer, residual_streams, with_eos_prefix};
use crate::engine::{forward_logprobs_ids, TensorArchive};
use crate::error::{Error, Result};
use crate::surgery::{DegradationSpec, Location, MaskSession};
use crate::tensor::Scalar;
use crate::tokenizer::Tokenizer;

/// Summed NLL and token count of one transcript, over all its chunks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllSum {
    pub nll: f64,
    pub tokens: usize,
    pub chunks: usize,
}

impl NllSum {
    pub fn perplexity(&self) -> f64 {
        (self.nll / self.tokens as f64).exp()
    }
}

/// Splits text ids into non-overlapping windows that fit the context once
/// the end-of-text prefix is added.
pub fn chunk_ids(ids: &[u32], context_window: usize) -> Vec<&[u32]> {
    ids.chunks(context_window.saturating_sub(1).max(1)).collect()
}

pub fn nll_of_ids<T: Scalar>(ids: &[u32], weights: &TensorArchive<T>) -> Result<NllSum> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut sum = NllSum {
        nll: 0.0,
        tokens: 0,
        chunks: 0,
    };
    for chunk in chunk_ids(ids, weights.config.context_window) {
        let trace = forward_logprobs_ids(chunk, weights)?;
        sum.nll += trace.nll;
        sum.tokens += trace.len();
        sum.chunks += 1;
    }
    Ok(sum)
}

/// Perplexity of a preprocessed transcript: exp of the mean NLL over all
/// scored tokens, chunk sums pooled before dividing.
pub fn transcript_ppl<T: Scalar>(
    transcript: &Transcript,
    tokenizer: &Tokenizer,
    weights: &TensorArchive<T>,
) -> Result<f64> {
    let ids = tokenizer.encode(&transcript.clean_text).ids;
    if ids.is_empty() {
        return Err(Error::EmptyTranscript(transcript.transcript_id.clone()));
    }
    Ok(nll_of_ids(&ids, weights)?.perplexity())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedScore {
    pub participant_id: String,
    pub ppl_base: f64,
    pub ppl_degraded: f64,
    pub ratio: f64,
    pub difference: f64,
    pub n_transcripts_averaged: usize,
    pub label: Label,
    pub mmse: Option<u8>,
}

impl PairedScore {
    /// Averages per-transcript perplexities first, then forms the ratio.
    pub fn from_ppls(
        participant_id: &str,
        label: Label,
        mmse: Option<u8>,
        ppls: &[(f64, f64)],
    ) -> Result<Self> {
        if ppls.is_empty() {
            return Err(Error::NoScoreableTranscripts(participant_id.to_string()));
        }
        let n = ppls.len() as f64;
        let ppl_base = ppls.iter().map(|p| p.0).sum::<f64>() / n;
        let ppl_degraded = ppls.iter().map(|p| p.1).sum::<f64>() / n;
        Ok(Self {
            participant_id: participant_id.to_string(),
            ppl_base,
            ppl_degraded,
            ratio: ppl_base / ppl_degraded,
            difference: ppl_base - ppl_degraded,
            n_transcripts_averaged: ppls.len(),
            label,
            mmse,
        })
    }
}

/// Scores one participant's transcripts under both models. Transcripts
/// that tokenize to nothing are skipped.
pub fn paired_score<T: Scalar>(
    participant_transcripts: &[&Transcript],
    tokenizer: &Tokenizer,
    base: &TensorArchive<T>,
    degraded: &TensorArchive<T>,
) -> Result<PairedScore> {
    let first = participant_transcripts
        .first()
        .ok_or_else(|| Error::NoScoreableTranscripts(String::new()))?;
    let mut ppls = Vec::new();
    for t in participant_transcripts {
        let ids = tokenizer.encode(&t.clean_text).ids;
        if ids.is_empty() {
            continue;
        }
        ppls.push((nll_of_ids(&ids, base)?.perplexity(), nll_of_ids(&ids, degraded)?.perplexity()));
    }
    PairedScore::from_ppls(&first.participant_id, first.label, first.mmse, &ppls)
}

#[derive(Debug, Clone)]
struct TokenizedTranscript {
    transcript_id: String,
    chunks: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
struct TokenizedParticipant {
    id: String,
    label: Label,
    mmse: Option<u8>,
    transcripts: Vec<TokenizedTranscript>,
}

/// Scores for every scoreable participant of a corpus under one degraded
/// model, with the exclusions met on the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub corpus_id: String,
    pub spec: Option<DegradationSpec>,
    pub rows: Vec<PairedScore>,
    pub excluded: Vec<Exclusion>,
    /// Transcripts longer than one context window.
    pub chunked: Vec<String>,
}

/// Where a degraded model first differs from the base.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    /// Nothing masked; degraded scores equal base scores.
    None,
    /// Layers below this one are untouched.
    Layer(usize),
    Embedding,
}

impl Divergence {
    pub fn of(spec: &DegradationSpec) -> Self {
        match spec.location {
            Location::EmbeddingRows => Divergence::Embedding,
            Location::AttentionValueColumns => match spec.layers.first() {
                None => Divergence::None,
                Some(l) => Divergence::Layer(l),
            },
        }
    }
}

/// A corpus tokenized once and scored under the base model once, reused
/// across many degraded models. With `cache_streams`, the residual stream
/// entering every layer is kept for each chunk so a model masked from
/// layer `l` upward only recomputes layers `l..`; the result is bit-equal
/// to a full forward pass.
pub struct PairedScorer<'a, T: Scalar> {
    corpus_id: String,
    base: &'a TensorArchive<T>,
    participants: Vec<TokenizedParticipant>,
    excluded: Vec<Exclusion>,
    chunked: Vec<String>,
    base_nll: Vec<Vec<NllSum>>,
    // [participant][transcript][chunk][layer]
    streams: Option<Vec<Vec<Vec<Vec<Vec<T>>>>>>,
}

impl<'a, T: Scalar> PairedScorer<'a, T> {
    pub fn new(
        corpus: &Corpus,
        tokenizer: &Tokenizer,
        base: &'a TensorArchive<T>,
        cache_streams: bool,
    ) -> Result<Self> {
        let ctx = base.config.context_window;
        let mut participants = Vec::new();
        let mut excluded = Vec::new();
        let mut chunked = Vec::new();
        for p in corpus.participants() {
            let mut transcripts = Vec::new();
            for t in &p.transcripts {
                let ids = tokenizer.encode(&t.clean_text).ids;
                if ids.is_empty() {
                    excluded.push(Exclusion {
                        participant_id: p.id.to_string(),
                        transcript_id: t.transcript_id.clone(),
                        reason: "no tokens after preprocessing".into(),
                    });
                    continue;
                }
                let chunks: Vec<Vec<u32>> =
                    chunk_ids(&ids, ctx).into_iter().map(<[u32]>::to_vec).collect();
                if chunks.len() > 1 {
                    chunked.push(t.transcript_id.clone());
                }
                transcripts.push(TokenizedTranscript {
                    transcript_id: t.transcript_id.clone(),
                    chunks,
                });
            }
            if transcripts.is_empty() {
                excluded.push(Exclusion {
                    participant_id: p.id.to_string(),
                    transcript_id: String::new(),
                    reason: "participant has no scoreable transcripts".into(),
                });
                continue;
            }
            participants.push(TokenizedParticipant {
                id: p.id.to_string(),
                label: p.label,
                mmse: p.mmse,
                transcripts,
            });
        }

        let per_chunk = |chunk: &Vec<u32>| -> Result<(f64, Option<Vec<Vec<T>>>)> {
            let input = &with_eos_prefix(base, chunk)[..chunk.len()];
            let mut streams = residual_streams(base, input)?;
            let last = streams.pop().expect("n_layers + 1 streams");
            let nll = logprobs_from_layer(base, base.config.n_layers, last, chunk).nll;
            Ok((nll, cache_streams.then_some(streams)))
        };
        let computed: Vec<Vec<Vec<(f64, Option<Vec<Vec<T>>>)>>> = participants
            .par_iter()
            .map(|p| {
                p.transcripts
                    .iter()
                    .map(|t| t.chunks.iter().map(per_chunk).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        let mut base_nll = Vec::with_capacity(participants.len());
        let mut streams = cache_streams.then(Vec::new);
        for (p, per_t) in participants.iter().zip(computed) {
            let mut sums = Vec::new();
            let mut p_streams = Vec::new();
            for (t, per_c) in p.transcripts.iter().zip(per_t) {
                let mut sum = NllSum {
                    nll: 0.0,
                    tokens: 0,
                    chunks: 0,
                };
                let mut t_streams = Vec::new();
                for (c, (nll, s)) in t.chunks.iter().zip(per_c) {
                    sum.nll += nll;
                    sum.tokens += c.len();
                    sum.chunks += 1;
                    if let Some(s) = s {
                        t_streams.push(s);
                    }
                }
                sums.push(sum);
                p_streams.push(t_streams);
            }
            base_nll.push(sums);
            if let Some(all) = streams.as_mut() {
                all.push(p_streams);
            }
        }

        Ok(Self {
            corpus_id: corpus.id.clone(),
            base,
            participants,
            excluded,
            chunked,
            base_nll,
            streams,
        })
    }

    pub fn base(&self) -> &TensorArchive<T> {
        self.base
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    /// Scores under `spec` applied to a private copy of the base weights.
    /// The empty layer set is accepted and scores as the identity.
    pub fn score_with_spec(&self, spec: &DegradationSpec) -> Result<ScoreTable> {
        let mut weights = self.base.clone();
        let session = MaskSession::apply(&mut weights, spec)?;
        self.score_spec(session.weights(), spec)
    }

    pub fn n_participants(&self) -> usize {
        self.participants.len()
    }

    /// Base-model NLL sums, `[participant][transcript]`.
    pub fn base_nll(&self) -> &[Vec<NllSum>] {
        &self.base_nll
    }

    fn degraded_nll(
        &self,
        degraded: &TensorArchive<T>,
        divergence: Divergence,
        pi: usize,
        ti: usize,
    ) -> Result<NllSum> {
        let t = &self.participants[pi].transcripts[ti];
        match divergence {
            Divergence::None => return Ok(self.base_nll[pi][ti]),
            Divergence::Layer(l) if l >= degraded.config.n_layers => {
                return Ok(self.base_nll[pi][ti])
            }
            _ => {}
        }
        let mut sum = NllSum {
            nll: 0.0,
            tokens: 0,
            chunks: 0,
        };
        for (ci, chunk) in t.chunks.iter().enumerate() {
            let trace = match (divergence, &self.streams) {
                (Divergence::Layer(l), Some(streams)) => {
                    let h = streams[pi][ti][ci][l].clone();
                    logprobs_from_layer(degraded, l, h, chunk)
                }
                _ => forward_logprobs_ids(chunk, degraded)?,
            };
            sum.nll += trace.nll;
            sum.tokens += trace.len();
            sum.chunks += 1;
        }
        Ok(sum)
    }

    /// Scores every participant under `degraded`, which must equal the base
    /// weights below the point `divergence` names.
    pub fn score(
        &self,
        degraded: &TensorArchive<T>,
        divergence: Divergence,
        spec: Option<DegradationSpec>,
    ) -> Result<ScoreTable> {
        let rows = (0..self.participants.len())
            .into_par_iter()
            .map(|pi| {
                let p = &self.participants[pi];
                let ppls = (0..p.transcripts.len())
                    .map(|ti| {
                        let d = self.degraded_nll(degraded, divergence, pi, ti)?;
                        Ok((self.base_nll[pi][ti].perplexity(), d.perplexity()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                PairedScore::from_ppls(&p.id, p.label, p.mmse, &ppls)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreTable {
            corpus_id: self.corpus_id.clone(),
            spec,
            rows,
            excluded: self.excluded.clone(),
            chunked: self.chunked.clone(),
        })
    }

    /// Scores under a spec-degraded model, deriving the divergence point
    /// from the spec.
    pub fn score_spec(&self, degraded: &TensorArchive<T>, spec: &DegradationSpec) -> Result<ScoreTable> {
        self.score(degraded, Divergence::of(spec), Some(*spec))
    }

    /// Per-transcript perplexities under `degraded`, keyed by transcript id:
    /// `(base, degraded)`.
    pub fn transcript_ppls(
        &self,
        degraded: &TensorArchive<T>,
        divergence: Divergence,
    ) -> Result<BTreeMap<String, (f64, f64)>> {
        let mut out = BTreeMap::new();
        for (pi, p) in self.participants.iter().enumerate() {
            for (ti, t) in p.transcripts.iter().enumerate() {
                let d = self.degraded_nll(degraded, divergence, pi, ti)?;
                out.insert(
                    t.transcript_id.clone(),
                    (self.base_nll[pi][ti].perplexity(), d.perplexity()),
                );
            }
        }
        Ok(out)
    }
}

/// Scores a whole corpus once, without reuse.
pub fn score_corpus<T: Scalar>(
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    base: &TensorArchive<T>,
    degraded: &TensorArchive<T>,
    spec: Option<DegradationSpec>,
) -> Result<ScoreTable> {
    let scorer = PairedScorer::new(corpus, tokenizer, base, false)?;
    let divergence = spec.as_ref().map_or(Divergence::Embedding, Divergence::of);
    let divergence = match divergence {
        Divergence::Layer(_) => Divergence::Embedding,
        d => d,
    };
    scorer.score(degraded, divergence, spec)
}

impl ScoreTable {
    /// Tab-separated rows with a header; floats in shortest round-trip form.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "participant_id\tlabel\tmmse\tppl_base\tppl_degraded\tratio\tdifference\tn_transcripts\n",
        );
        for r in &self.rows {
            let label = match r.label {
                Label::Dementia => "dementia",
                Label::Control => "control",
                Label::Unknown => "unknown",
            };
            let mmse = r.mmse.map(|m| m.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.participant_id,
                label,
                mmse,
                r.ppl_base,
                r.ppl_degraded,
                r.ratio,
                r.difference,
                r.n_transcripts_averaged
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PreprocessConfig;
    use crate::engine::synthetic::{random_archive, tiny_gpt2_config, uniform_archive};
    use crate::engine::ModelConfig;
    use crate::surgery::{degrade, LayerSet};
    use crate::tokenizer::tests::gpt2;

    fn transcript(pid: &str, tid: &str, text: &str, label: Label) -> Transcript {
        Transcript {
            participant_id: pid.into(),
            transcript_id: tid.into(),
            raw_text: text.into(),
            clean_text: text.into(),
            label,
            mmse: None,
            source: String::new(),
        }
    }

    fn small_corpus() -> Corpus {
        Corpus::new(
            "t",
            vec![
                transcript("a", "a1", "the boy is on the stool", Label::Dementia),
                transcript("a", "a2", "and the cookie jar is open", Label::Dementia),
                transcript("b", "b1", "mother is washing dishes and the sink overflows", Label::Control),
                transcript("c", "c1", "the girl laughs", Label::Control),
            ],
            vec![],
            PreprocessConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let a = uniform_archive(tiny_gpt2_config());
        let t = transcript("p", "t", "the boy takes cookies from the jar", Label::Control);
        let ppl = transcript_ppl(&t, gpt2(), &a).unwrap();
        assert!((ppl - 50_257.0).abs() / 50_257.0 < 1e-4, "{ppl}");
    }

    #[test]
    fn empty_transcript_is_an_error() {
        let a = uniform_archive(tiny_gpt2_config());
        let t = transcript("p", "t", "", Label::Control);
        assert!(matches!(transcript_ppl(&t, gpt2(), &a), Err(Error::EmptyTranscript(_))));
    }

    #[test]
    fn averaging_is_ratio_of_means() {
        let s = PairedScore::from_ppls("p", Label::Dementia, None, &[(20.0, 10.0), (40.0, 20.0)]).unwrap();
        assert_eq!(s.ppl_base, 30.0);
        assert_eq!(s.ppl_degraded, 15.0);
        assert_eq!(s.ratio, 2.0);
        assert_eq!(s.difference, 15.0);
        assert_eq!(s.n_transcripts_averaged, 2);
        let s = PairedScore::from_ppls("p", Label::Dementia, None, &[(10.0, 40.0), (40.0, 10.0)]).unwrap();
        assert_eq!(s.ratio, 1.0);
    }

    #[test]
    fn identity_degradation_gives_unit_ratio() {
        let base = random_archive(tiny_gpt2_config(), 3, 0.2);
        let c = small_corpus();
        let p = c.participants();
        let s = paired_score(&p[0].transcripts, gpt2(), &base, &base).unwrap();
        assert_eq!(s.ratio, 1.0);
        assert_eq!(s.difference, 0.0);
        assert_eq!(s.n_transcripts_averaged, 2);
    }

    #[test]
    fn single_transcript_ratio_matches_transcript_level() {
        let base = random_archive(tiny_gpt2_config(), 3, 0.2);
        let spec = DegradationSpec::value_columns(LayerSet::range(0, 5));
        let (deg, _) = degrade(&base, &spec).unwrap();
        let c = small_corpus();
        let p = c.participants();
        let t = p[2].transcripts[0];
        let s = paired_score(&p[2].transcripts, gpt2(), &base, &deg).unwrap();
        let r = transcript_ppl(t, gpt2(), &base).unwrap() / transcript_ppl(t, gpt2(), &deg).unwrap();
        assert_eq!(s.ratio, r);
        assert!((s.ratio - s.ppl_base / s.ppl_degraded).abs() < 1e-12);
    }

    #[test]
    fn chunking_conserves_tokens_and_splits_long_input() {
        let cfg = ModelConfig {
            context_window: 8,
            ..tiny_gpt2_config()
        };
        let a = random_archive(cfg, 1, 0.2);
        let ids: Vec<u32> = (0..20).map(|i| 100 + i).collect();
        let s = nll_of_ids(&ids, &a).unwrap();
        assert_eq!(s.tokens, 20);
        assert_eq!(s.chunks, 3);
        let by_hand: f64 = chunk_ids(&ids, 8)
            .iter()
            .map(|c| forward_logprobs_ids(c, &a).unwrap().nll)
            .sum();
        assert_eq!(s.nll, by_hand);
        assert!(chunk_ids(&ids, 8).iter().all(|c| c.len() <= 7));
    }

    #[test]
    fn repeating_a_single_chunk_sequence_keeps_ppl() {
        let a = uniform_archive(tiny_gpt2_config());
        let ids: Vec<u32> = vec![5, 6, 7];
        let twice: Vec<u32> = ids.iter().chain(ids.iter()).copied().collect();
        let p1 = nll_of_ids(&ids, &a).unwrap().perplexity();
        let p2 = nll_of_ids(&twice, &a).unwrap().perplexity();
        assert!((p1 - p2).abs() / p1 < 1e-9);
    }

    #[test]
    fn scorer_matches_direct_scoring_bit_for_bit() {
        let base = random_archive(tiny_gpt2_config(), 9, 0.2);
        let c = small_corpus();
        let cached = PairedScorer::new(&c, gpt2(), &base, true).unwrap();
        let plain = PairedScorer::new(&c, gpt2(), &base, false).unwrap();
        for layers in ["0", "3-5", "7,11", "11"] {
            let spec = DegradationSpec::value_columns(layers.parse().unwrap());
            let (deg, _) = degrade(&base, &spec).unwrap();
            let a = cached.score_spec(&deg, &spec).unwrap();
            let b = plain.score_spec(&deg, &spec).unwrap();
            let direct: Vec<PairedScore> = c
                .participants()
                .iter()
                .map(|p| paired_score(&p.transcripts, gpt2(), &base, &deg).unwrap())
                .collect();
            assert_eq!(a.rows, direct, "{layers}");
            assert_eq!(b.rows, direct, "{layers}");
        }
        let none = DegradationSpec::value_columns(LayerSet::empty());
        let t = cached.score_spec(&base, &none).unwrap();
        assert!(t.rows.iter().all(|r| r.ratio == 1.0));
    }

    #[test]
    fn scoring_is_independent_of_thread_count() {
        let base = random_archive(tiny_gpt2_config(), 9, 0.2);
        let spec = DegradationSpec::value_columns(LayerSet::range(0, 8));
        let (deg, _) = degrade(&base, &spec).unwrap();
        let c = small_corpus();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| score_corpus(&c, gpt2(), &base, &deg, Some(spec)).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn participants_without_tokens_are_reported() {
        let base = random_archive(tiny_gpt2_config(), 9, 0.2);
        let mut c = small_corpus();
        c.transcripts.push(transcript("z", "z1", "", Label::Control));
        let s = PairedScorer::new(&c, gpt2(), &base, false).unwrap();
        assert_eq!(s.n_participants(), 3);
        let t = s.score(&base, Divergence::None, None).unwrap();
        assert_eq!(t.excluded.len(), 2);
        assert!(t.to_tsv().starts_with("participant_id\t"));
    }
}
