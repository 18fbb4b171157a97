//! Inference-only forward pass of the GPT-2 decoder stack.

use super::archive::{names, TensorArchive};
use crate::error::{Error, Result};
use crate::tensor::{add_bias, log_softmax_at, matmul, matmul_bt, softmax_in_place, Scalar};
use crate::tokenizer::TokenSequence;

/// Additive score for key positions a query may not attend to.
pub const CAUSAL_MASK: f64 = -1e9;

/// Rows of the output projection computed per batch when scoring; bounds
/// the `rows × vocab` logit buffer.
const LOGIT_ROWS: usize = 64;

/// Per-position log-probabilities of the observed next tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbTrace {
    pub logprobs: Vec<f64>,
    pub nll: f64,
}

impl LogProbTrace {
    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }

    pub fn perplexity(&self) -> f64 {
        (self.nll / self.len() as f64).exp()
    }
}

pub(crate) fn layer_norm_rows<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Vec<T> {
    let d = gain.len();
    let mut out = vec![T::zero(); x.len()];
    for (row, o) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let n = T::lit(d as f64);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / n;
        let inv = T::one() / (var + eps).sqrt();
        for i in 0..d {
            o[i] = (row[i] - mean) * inv * gain[i] + bias[i];
        }
    }
    out
}

/// Tanh approximation of GELU used by GPT-2.
#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    T::lit(0.5) * x * (T::one() + (c * (x + T::lit(0.044715) * x * x * x)).tanh())
}

/// Causal multi-head scaled dot-product attention.
///
/// `q` is `t_q × d`, `k` and `v` are `t_k × d` with heads laid out as
/// consecutive `head_dim` column blocks. Query row `i` sits at absolute
/// position `q_offset + i` and sees keys `0..=q_offset + i`. Returns the
/// heads' outputs concatenated back into `t_q × d`, before the output
/// projection.
pub fn multi_head_attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    n_heads: usize,
    q_offset: usize,
) -> Vec<T> {
    let t_q = q.len() / d;
    let t_k = k.len() / d;
    let hd = d / n_heads;
    let scale = T::one() / T::lit(hd as f64).sqrt();
    let mask = T::lit(CAUSAL_MASK);
    let mut out = vec![T::zero(); t_q * d];

    let mut qh = vec![T::zero(); t_q * hd];
    let mut kh = vec![T::zero(); t_k * hd];
    let mut vh = vec![T::zero(); t_k * hd];
    for h in 0..n_heads {
        let c0 = h * hd;
        for i in 0..t_q {
            qh[i * hd..(i + 1) * hd].copy_from_slice(&q[i * d + c0..i * d + c0 + hd]);
        }
        for j in 0..t_k {
            kh[j * hd..(j + 1) * hd].copy_from_slice(&k[j * d + c0..j * d + c0 + hd]);
            vh[j * hd..(j + 1) * hd].copy_from_slice(&v[j * d + c0..j * d + c0 + hd]);
        }
        let mut scores = matmul_bt(&qh, t_q, hd, &kh, t_k);
        for i in 0..t_q {
            let row = &mut scores[i * t_k..(i + 1) * t_k];
            for (j, s) in row.iter_mut().enumerate() {
                *s = *s * scale;
                if j > q_offset + i {
                    *s += mask;
                }
            }
            softmax_in_place(row);
        }
        let ctx = matmul(&scores, t_q, t_k, &vh, hd);
        for i in 0..t_q {
            out[i * d + c0..i * d + c0 + hd].copy_from_slice(&ctx[i * hd..(i + 1) * hd]);
        }
    }
    out
}

/// Keys and values of already-processed positions, one buffer pair per layer.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(n_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Token plus positional embeddings for `ids` starting at position `pos0`.
pub fn embed<T: Scalar>(a: &TensorArchive<T>, ids: &[u32], pos0: usize) -> Vec<T> {
    let d = a.config.d_model;
    let wte = &a.t(names::WTE).data;
    let mut x = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        let id = id as usize;
        x.extend_from_slice(&wte[id * d..(id + 1) * d]);
    }
    add_positions(a, &mut x, pos0);
    x
}

pub(crate) fn add_positions<T: Scalar>(a: &TensorArchive<T>, x: &mut [T], pos0: usize) {
    let d = a.config.d_model;
    let wpe = &a.t(names::WPE).data;
    for (i, row) in x.chunks_exact_mut(d).enumerate() {
        let p = pos0 + i;
        for (v, w) in row.iter_mut().zip(&wpe[p * d..(p + 1) * d]) {
            *v += *w;
        }
    }
}

/// Applies decoder layer `l` to the residual stream `h` (`t × d`) in place.
/// With a cache, `h` holds the positions following the cached ones and their
/// keys/values are appended; the cache length itself is advanced by the
/// caller once every layer has run.
fn run_layer<T: Scalar>(
    a: &TensorArchive<T>,
    l: usize,
    h: &mut [T],
    cache: Option<(&mut KvCache<T>, usize)>,
) {
    let cfg = &a.config;
    let d = cfg.d_model;
    let t = h.len() / d;
    let eps = T::lit(cfg.ln_eps);

    let x = layer_norm_rows(h, a.layer_t(l, "ln_1.weight"), a.layer_t(l, "ln_1.bias"), eps);
    let mut qkv = matmul(&x, t, d, a.layer_t(l, "attn.c_attn.weight"), 3 * d);
    add_bias(&mut qkv, a.layer_t(l, "attn.c_attn.bias"));
    let mut q = Vec::with_capacity(t * d);
    let mut k = Vec::with_capacity(t * d);
    let mut v = Vec::with_capacity(t * d);
    for row in qkv.chunks_exact(3 * d) {
        q.extend_from_slice(&row[..d]);
        k.extend_from_slice(&row[d..2 * d]);
        v.extend_from_slice(&row[2 * d..]);
    }
    let ctx = match cache {
        Some((cache, past)) => {
            cache.keys[l].extend_from_slice(&k);
            cache.values[l].extend_from_slice(&v);
            multi_head_attention(&q, &cache.keys[l], &cache.values[l], d, cfg.n_heads, past)
        }
        None => multi_head_attention(&q, &k, &v, d, cfg.n_heads, 0),
    };
    let mut o = matmul(&ctx, t, d, a.layer_t(l, "attn.c_proj.weight"), d);
    add_bias(&mut o, a.layer_t(l, "attn.c_proj.bias"));
    for (hv, ov) in h.iter_mut().zip(&o) {
        *hv += *ov;
    }

    let x = layer_norm_rows(h, a.layer_t(l, "ln_2.weight"), a.layer_t(l, "ln_2.bias"), eps);
    let ff = cfg.d_ff();
    let mut f = matmul(&x, t, d, a.layer_t(l, "mlp.c_fc.weight"), ff);
    add_bias(&mut f, a.layer_t(l, "mlp.c_fc.bias"));
    f.iter_mut().for_each(|v| *v = gelu(*v));
    let mut o = matmul(&f, t, ff, a.layer_t(l, "mlp.c_proj.weight"), d);
    add_bias(&mut o, a.layer_t(l, "mlp.c_proj.bias"));
    for (hv, ov) in h.iter_mut().zip(&o) {
        *hv += *ov;
    }
}

fn final_norm<T: Scalar>(a: &TensorArchive<T>, h: &[T]) -> Vec<T> {
    layer_norm_rows(
        h,
        &a.t(names::LN_F_W).data,
        &a.t(names::LN_F_B).data,
        T::lit(a.config.ln_eps),
    )
}

/// Next-token logits (tied output embedding) for each row of `normed`.
fn project_vocab<T: Scalar>(a: &TensorArchive<T>, normed: &[T]) -> Vec<T> {
    let d = a.config.d_model;
    matmul_bt(
        normed,
        normed.len() / d,
        d,
        &a.t(names::WTE).data,
        a.config.vocab_size,
    )
}

fn check_ids<T: Scalar>(a: &TensorArchive<T>, ids: &[u32]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    if ids.len() > a.config.context_window {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: a.config.context_window,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= a.config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: a.config.vocab_size,
        });
    }
    Ok(())
}

/// Residual stream entering every layer, plus the stream after the last
/// layer: `n_layers + 1` buffers of `ids.len() × d`.
pub fn residual_streams<T: Scalar>(a: &TensorArchive<T>, ids: &[u32]) -> Result<Vec<Vec<T>>> {
    check_ids(a, ids)?;
    let mut h = embed(a, ids, 0);
    let mut out = Vec::with_capacity(a.config.n_layers + 1);
    for l in 0..a.config.n_layers {
        out.push(h.clone());
        run_layer(a, l, &mut h, None);
    }
    out.push(h);
    Ok(out)
}

/// Runs layers `start_layer..` on `h` (the stream entering `start_layer`
/// for the whole input) and scores `targets[i]` at row `i`.
pub fn logprobs_from_layer<T: Scalar>(
    a: &TensorArchive<T>,
    start_layer: usize,
    mut h: Vec<T>,
    targets: &[u32],
) -> LogProbTrace {
    let d = a.config.d_model;
    for l in start_layer..a.config.n_layers {
        run_layer(a, l, &mut h, None);
    }
    let normed = final_norm(a, &h);
    let mut logprobs = Vec::with_capacity(targets.len());
    for (c, chunk) in targets.chunks(LOGIT_ROWS).enumerate() {
        let r0 = c * LOGIT_ROWS;
        let logits = project_vocab(a, &normed[r0 * d..(r0 + chunk.len()) * d]);
        for (i, &target) in chunk.iter().enumerate() {
            let row = &logits[i * a.config.vocab_size..(i + 1) * a.config.vocab_size];
            logprobs.push(log_softmax_at(row, target as usize));
        }
    }
    let nll = -logprobs.iter().sum::<f64>();
    LogProbTrace { logprobs, nll }
}

/// `[eos] ++ ids`, the input whose positions `0..n` predict `ids`.
pub fn with_eos_prefix<T: Scalar>(a: &TensorArchive<T>, ids: &[u32]) -> Vec<u32> {
    std::iter::once(a.config.eos_token_id)
        .chain(ids.iter().copied())
        .collect()
}

/// Log-probability of every token of `tokens` given everything before it,
/// with the end-of-text token prepended as the first context.
pub fn forward_logprobs<T: Scalar>(
    tokens: &TokenSequence,
    a: &TensorArchive<T>,
) -> Result<LogProbTrace> {
    forward_logprobs_ids(&tokens.ids, a)
}

pub fn forward_logprobs_ids<T: Scalar>(ids: &[u32], a: &TensorArchive<T>) -> Result<LogProbTrace> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let input = with_eos_prefix(a, ids);
    check_ids(a, &input)?;
    let n = ids.len();
    let h = embed(a, &input[..n], 0);
    Ok(logprobs_from_layer(a, 0, h, ids))
}

/// Logits at every position of `ids` (no implicit prefix).
pub fn forward_logits<T: Scalar>(a: &TensorArchive<T>, ids: &[u32]) -> Result<Vec<T>> {
    check_ids(a, ids)?;
    let mut h = embed(a, ids, 0);
    for l in 0..a.config.n_layers {
        run_layer(a, l, &mut h, None);
    }
    Ok(project_vocab(a, &final_norm(a, &h)))
}

/// Final-position logits computed from caller-supplied token embeddings;
/// positional embeddings are still added.
pub fn forward_logits_with_embedding_override<T: Scalar>(
    embeddings: &[Vec<T>],
    a: &TensorArchive<T>,
) -> Result<Vec<T>> {
    let d = a.config.d_model;
    if embeddings.is_empty() {
        return Err(Error::EmptySequence);
    }
    if embeddings.len() > a.config.context_window {
        return Err(Error::SequenceTooLong {
            len: embeddings.len(),
            max: a.config.context_window,
        });
    }
    if let Some(e) = embeddings.iter().find(|e| e.len() != d) {
        return Err(Error::EmbeddingDim {
            expected: d,
            actual: e.len(),
        });
    }
    let mut h: Vec<T> = embeddings.concat();
    add_positions(a, &mut h, 0);
    for l in 0..a.config.n_layers {
        run_layer(a, l, &mut h, None);
    }
    let t = embeddings.len();
    Ok(project_vocab(a, &final_norm(a, &h[(t - 1) * d..])))
}

/// Feeds `ids` after the cached positions and returns the logits at the last
/// new position.
pub fn extend_cache<T: Scalar>(
    a: &TensorArchive<T>,
    cache: &mut KvCache<T>,
    ids: &[u32],
) -> Result<Vec<T>> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let total = cache.len + ids.len();
    if total > a.config.context_window {
        return Err(Error::SequenceTooLong {
            len: total,
            max: a.config.context_window,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= a.config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: a.config.vocab_size,
        });
    }
    let d = a.config.d_model;
    let past = cache.len;
    let mut h = embed(a, ids, past);
    for l in 0..a.config.n_layers {
        run_layer(a, l, &mut h, Some((cache, past)));
    }
    cache.len = total;
    let t = ids.len();
    Ok(project_vocab(a, &final_norm(a, &h[(t - 1) * d..])))
}
