//! Reverse-mode gradient of one final-position logit with respect to the
//! input token embeddings. Only what saliency needs: no weight gradients.

use super::archive::{names, TensorArchive};
use super::forward::{add_positions, gelu, CAUSAL_MASK};
use crate::error::{Error, Result};
use crate::tensor::{add_bias, matmul, matmul_at, matmul_bt, softmax_in_place, Scalar};

struct NormTape<T> {
    xhat: Vec<T>,
    inv: Vec<T>,
}

fn layer_norm_taped<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    eps: T,
) -> (Vec<T>, NormTape<T>) {
    let d = gain.len();
    let rows = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); rows];
    let n = T::lit(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / n;
        let s = T::one() / (var + eps).sqrt();
        inv[r] = s;
        for i in 0..d {
            let xh = (row[i] - mean) * s;
            xhat[r * d + i] = xh;
            out[r * d + i] = xh * gain[i] + bias[i];
        }
    }
    (out, NormTape { xhat, inv })
}

fn layer_norm_backward<T: Scalar>(dy: &[T], gain: &[T], tape: &NormTape<T>) -> Vec<T> {
    let d = gain.len();
    let n = T::lit(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for (r, s) in tape.inv.iter().enumerate() {
        let xh = &tape.xhat[r * d..(r + 1) * d];
        let g: Vec<T> = (0..d).map(|i| dy[r * d + i] * gain[i]).collect();
        let mean_g = g.iter().fold(T::zero(), |a, &v| a + v) / n;
        let mean_gx = g
            .iter()
            .zip(xh)
            .fold(T::zero(), |a, (&gv, &xv)| a + gv * xv)
            / n;
        for i in 0..d {
            dx[r * d + i] = *s * (g[i] - mean_g - xh[i] * mean_gx);
        }
    }
    dx
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let th = (c * (x + a * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::lit(3.0) * a * x * x)
}

struct LayerTape<T> {
    ln1: NormTape<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<Vec<T>>,
    ln2: NormTape<T>,
    pre_act: Vec<T>,
}

/// Returns the final-position logits and `∂ logit[target] / ∂ embeddings[i]`
/// for every input position.
pub fn logit_gradient<T: Scalar>(
    a: &TensorArchive<T>,
    embeddings: &[Vec<T>],
    target: usize,
) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    let cfg = a.config;
    let d = cfg.d_model;
    let t = embeddings.len();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    if t > cfg.context_window {
        return Err(Error::SequenceTooLong {
            len: t,
            max: cfg.context_window,
        });
    }
    if let Some(e) = embeddings.iter().find(|e| e.len() != d) {
        return Err(Error::EmbeddingDim {
            expected: d,
            actual: e.len(),
        });
    }
    if target >= cfg.vocab_size {
        return Err(Error::TokenOutOfRange {
            id: target as u32,
            vocab_size: cfg.vocab_size,
        });
    }
    let eps = T::lit(cfg.ln_eps);
    let heads = cfg.n_heads;
    let hd = cfg.head_dim();
    let ff = cfg.d_ff();
    let scale = T::one() / T::lit(hd as f64).sqrt();

    let mut h: Vec<T> = embeddings.concat();
    add_positions(a, &mut h, 0);

    let mut tapes = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (x1, ln1) = layer_norm_taped(&h, a.layer_t(l, "ln_1.weight"), a.layer_t(l, "ln_1.bias"), eps);
        let mut qkv = matmul(&x1, t, d, a.layer_t(l, "attn.c_attn.weight"), 3 * d);
        add_bias(&mut qkv, a.layer_t(l, "attn.c_attn.bias"));
        let (mut q, mut k, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for row in qkv.chunks_exact(3 * d) {
            q.extend_from_slice(&row[..d]);
            k.extend_from_slice(&row[d..2 * d]);
            v.extend_from_slice(&row[2 * d..]);
        }
        let mut ctx = vec![T::zero(); t * d];
        let mut probs = Vec::with_capacity(heads);
        for hh in 0..heads {
            let (qh, kh, vh) = (head(&q, t, d, hh, hd), head(&k, t, d, hh, hd), head(&v, t, d, hh, hd));
            let mut p = matmul_bt(&qh, t, hd, &kh, t);
            for i in 0..t {
                let row = &mut p[i * t..(i + 1) * t];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = *s * scale;
                    if j > i {
                        *s += T::lit(CAUSAL_MASK);
                    }
                }
                softmax_in_place(row);
            }
            let c = matmul(&p, t, t, &vh, hd);
            scatter_head(&mut ctx, &c, t, d, hh, hd);
            probs.push(p);
        }
        let mut o = matmul(&ctx, t, d, a.layer_t(l, "attn.c_proj.weight"), d);
        add_bias(&mut o, a.layer_t(l, "attn.c_proj.bias"));
        for (hv, ov) in h.iter_mut().zip(&o) {
            *hv += *ov;
        }
        let (x2, ln2) = layer_norm_taped(&h, a.layer_t(l, "ln_2.weight"), a.layer_t(l, "ln_2.bias"), eps);
        let mut pre_act = matmul(&x2, t, d, a.layer_t(l, "mlp.c_fc.weight"), ff);
        add_bias(&mut pre_act, a.layer_t(l, "mlp.c_fc.bias"));
        let act: Vec<T> = pre_act.iter().map(|&x| gelu(x)).collect();
        let mut o = matmul(&act, t, ff, a.layer_t(l, "mlp.c_proj.weight"), d);
        add_bias(&mut o, a.layer_t(l, "mlp.c_proj.bias"));
        for (hv, ov) in h.iter_mut().zip(&o) {
            *hv += *ov;
        }
        tapes.push(LayerTape {
            ln1,
            q,
            k,
            v,
            probs,
            ln2,
            pre_act,
        });
    }

    let last = &h[(t - 1) * d..];
    let gain_f = &a.t(names::LN_F_W).data;
    let (normed, lnf) = layer_norm_taped(last, gain_f, &a.t(names::LN_F_B).data, eps);
    let wte = &a.t(names::WTE).data;
    let logits = matmul_bt(&normed, 1, d, wte, cfg.vocab_size);

    // d logit / d normed = wte[target]; only the last row receives gradient.
    let dlast = layer_norm_backward(&wte[target * d..(target + 1) * d], gain_f, &lnf);
    let mut dh = vec![T::zero(); t * d];
    dh[(t - 1) * d..].copy_from_slice(&dlast);

    for (l, tape) in tapes.iter().enumerate().rev() {
        // MLP branch.
        let dact = matmul_bt(&dh, t, d, a.layer_t(l, "mlp.c_proj.weight"), ff);
        let dpre: Vec<T> = dact
            .iter()
            .zip(&tape.pre_act)
            .map(|(&g, &x)| g * gelu_grad(x))
            .collect();
        let dx2 = matmul_bt(&dpre, t, ff, a.layer_t(l, "mlp.c_fc.weight"), d);
        let dres = layer_norm_backward(&dx2, a.layer_t(l, "ln_2.weight"), &tape.ln2);
        for (g, r) in dh.iter_mut().zip(&dres) {
            *g += *r;
        }

        // Attention branch.
        let dctx = matmul_bt(&dh, t, d, a.layer_t(l, "attn.c_proj.weight"), d);
        let mut dqkv = vec![T::zero(); t * 3 * d];
        for hh in 0..heads {
            let p = &tape.probs[hh];
            let qh = head(&tape.q, t, d, hh, hd);
            let kh = head(&tape.k, t, d, hh, hd);
            let vh = head(&tape.v, t, d, hh, hd);
            let dc = head(&dctx, t, d, hh, hd);
            let dp = matmul_bt(&dc, t, hd, &vh, t);
            let dv = matmul_at(p, t, t, &dc, hd);
            let mut ds = vec![T::zero(); t * t];
            for i in 0..t {
                let pr = &p[i * t..(i + 1) * t];
                let dr = &dp[i * t..(i + 1) * t];
                let dot = pr.iter().zip(dr).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                for j in 0..t {
                    ds[i * t + j] = pr[j] * (dr[j] - dot) * scale;
                }
            }
            let dq = matmul(&ds, t, t, &kh, hd);
            let dk = matmul_at(&ds, t, t, &qh, hd);
            for i in 0..t {
                for c in 0..hd {
                    let col = hh * hd + c;
                    dqkv[i * 3 * d + col] = dq[i * hd + c];
                    dqkv[i * 3 * d + d + col] = dk[i * hd + c];
                    dqkv[i * 3 * d + 2 * d + col] = dv[i * hd + c];
                }
            }
        }
        let dx1 = matmul_bt(&dqkv, t, 3 * d, a.layer_t(l, "attn.c_attn.weight"), d);
        let dres = layer_norm_backward(&dx1, a.layer_t(l, "ln_1.weight"), &tape.ln1);
        for (g, r) in dh.iter_mut().zip(&dres) {
            *g += *r;
        }
    }

    Ok((logits, dh.chunks_exact(d).map(<[T]>::to_vec).collect()))
}

fn head<T: Scalar>(x: &[T], t: usize, d: usize, h: usize, hd: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(t * hd);
    for i in 0..t {
        out.extend_from_slice(&x[i * d + h * hd..i * d + (h + 1) * hd]);
    }
    out
}

fn scatter_head<T: Scalar>(dst: &mut [T], src: &[T], t: usize, d: usize, h: usize, hd: usize) {
    for i in 0..t {
        dst[i * d + h * hd..i * d + (h + 1) * hd].copy_from_slice(&src[i * hd..(i + 1) * hd]);
    }
}
