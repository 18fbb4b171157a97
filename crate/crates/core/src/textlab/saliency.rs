//! Gradient×input attribution of the next-token prediction to each prompt
//! token.

use serde::{Deserialize, Serialize};

use crate::engine::archive::names;
use crate::engine::{forward_logits_with_embedding_override, logit_gradient, TensorArchive};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Scalar};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub model: String,
    pub token_ids: Vec<u32>,
    /// Decoded text of each prompt token (filled by the text entry points).
    pub tokens: Vec<String>,
    /// `‖∂f_c/∂x_i ⊙ x_i‖₂` per token.
    pub weights: Vec<f64>,
    /// `weights` scaled to sum to 100.
    pub percentages: Vec<f64>,
    pub predicted_id: u32,
    pub predicted_token: String,
}

/// Token embeddings (without positions) of `ids`.
pub fn token_embeddings<T: Scalar>(a: &TensorArchive<T>, ids: &[u32]) -> Result<Vec<Vec<T>>> {
    let d = a.config.d_model;
    let wte = &a.get(names::WTE).ok_or_else(|| Error::MissingTensor(names::WTE.into()))?.data;
    ids.iter()
        .map(|&id| {
            if id as usize >= a.config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: a.config.vocab_size,
                });
            }
            Ok(wte[id as usize * d..(id as usize + 1) * d].to_vec())
        })
        .collect()
}

/// Top-1 next token after `ids`.
pub fn predict_next<T: Scalar>(a: &TensorArchive<T>, ids: &[u32]) -> Result<u32> {
    if ids.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let logits = forward_logits_with_embedding_override(&token_embeddings(a, ids)?, a)?;
    Ok(argmax(&logits) as u32)
}

/// Percentages proportional to `weights`; uniform when all are zero.
pub fn to_percentages(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter().map(|w| 100.0 * w / total).collect()
    } else {
        vec![100.0 / weights.len() as f64; weights.len()]
    }
}

/// Attribution of the top-1 next token to each position of `ids`.
pub fn saliency<T: Scalar>(ids: &[u32], a: &TensorArchive<T>, model: &str) -> Result<SaliencyMap> {
    saliency_for_target(ids, a, model, predict_next(a, ids)?)
}

/// Attribution of the logit of `target`.
pub fn saliency_for_target<T: Scalar>(
    ids: &[u32],
    a: &TensorArchive<T>,
    model: &str,
    target: u32,
) -> Result<SaliencyMap> {
    if ids.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let x = token_embeddings(a, ids)?;
    let (_, grads) = logit_gradient(a, &x, target as usize)?;
    let weights: Vec<f64> = x
        .iter()
        .zip(&grads)
        .map(|(xi, gi)| {
            xi.iter()
                .zip(gi)
                .map(|(&u, &g)| {
                    let v = (u * g).to_f64().unwrap_or(f64::NAN);
                    v * v
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(SaliencyMap {
        model: model.to_string(),
        token_ids: ids.to_vec(),
        tokens: Vec::new(),
        percentages: to_percentages(&weights),
        weights,
        predicted_id: target,
        predicted_token: String::new(),
    })
}

fn with_text(mut m: SaliencyMap, tokenizer: &Tokenizer) -> Result<SaliencyMap> {
    m.tokens = m
        .token_ids
        .iter()
        .map(|&id| tokenizer.decode(&[id]))
        .collect::<Result<_>>()?;
    m.predicted_token = tokenizer.decode(&[m.predicted_id])?;
    Ok(m)
}

pub fn saliency_text<T: Scalar>(
    prompt: &str,
    tokenizer: &Tokenizer,
    a: &TensorArchive<T>,
    model: &str,
) -> Result<SaliencyMap> {
    let ids = tokenizer.encode(prompt).ids;
    with_text(saliency(&ids, a, model)?, tokenizer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Alignment {
    Aligned {
        /// 0-based index into the prompt list.
        prompt_index: usize,
        prompt: String,
        base: SaliencyMap,
        degraded: SaliencyMap,
    },
    NoAlignment {
        /// `(prompt, base prediction, degraded prediction)`.
        predictions: Vec<(String, String, String)>,
    },
}

/// Maps for the first prompt on which both models predict the same next
/// token.
pub fn aligned_saliency<T: Scalar>(
    prompts: &[String],
    tokenizer: &Tokenizer,
    base: &TensorArchive<T>,
    degraded: &TensorArchive<T>,
) -> Result<Alignment> {
    let mut predictions = Vec::new();
    for (i, prompt) in prompts.iter().enumerate() {
        let ids = tokenizer.encode(prompt).ids;
        if ids.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let b = predict_next(base, &ids)?;
        let d = predict_next(degraded, &ids)?;
        if b == d {
            return Ok(Alignment::Aligned {
                prompt_index: i,
                prompt: prompt.clone(),
                base: with_text(saliency_for_target(&ids, base, "base", b)?, tokenizer)?,
                degraded: with_text(saliency_for_target(&ids, degraded, "degraded", d)?, tokenizer)?,
            });
        }
        predictions.push((prompt.clone(), tokenizer.decode(&[b])?, tokenizer.decode(&[d])?));
    }
    Ok(Alignment::NoAlignment { predictions })
}

impl SaliencyMap {
    /// One `token<TAB>percentage` line per prompt token.
    pub fn render(&self) -> String {
        let mut s = format!(
            "model={} predicted={:?} (id {})\n",
            self.model, self.predicted_token, self.predicted_id
        );
        for (i, p) in self.percentages.iter().enumerate() {
            let tok = self.tokens.get(i).cloned().unwrap_or_else(|| self.token_ids[i].to_string());
            s.push_str(&format!("{:?}\t{:.2}%\n", tok, p));
        }
        s
    }

    /// Inline heat view: each token shaded by its share of the largest
    /// percentage.
    pub fn to_html(&self) -> String {
        let max = self.percentages.iter().cloned().fold(0.0, f64::max).max(1e-12);
        let mut s = format!(
            "<div class=\"saliency\"><p>{} &rarr; <b>{}</b></p><p>",
            escape(&self.model),
            escape(&self.predicted_token)
        );
        for (i, p) in self.percentages.iter().enumerate() {
            let tok = self.tokens.get(i).cloned().unwrap_or_else(|| self.token_ids[i].to_string());
            s.push_str(&format!(
                "<span title=\"{p:.2}%\" style=\"background: rgba(220,40,40,{:.3})\">{}</span>",
                p / max,
                escape(&tok)
            ));
        }
        s.push_str("</p></div>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn html_page(maps: &[&SaliencyMap]) -> String {
    let mut s = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>saliency</title></head><body style=\"font-family: monospace\">\n",
    );
    for m in maps {
        s.push_str(&m.to_html());
    }
    s.push_str("</body></html>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::synthetic::random_archive;
    use crate::engine::ModelConfig;

    fn stub() -> TensorArchive<f64> {
        random_archive(
            ModelConfig {
                n_layers: 2,
                n_heads: 2,
                d_model: 8,
                vocab_size: 23,
                context_window: 16,
                ln_eps: 1e-5,
                eos_token_id: 22,
            },
            17,
            0.5,
        )
        .cast::<f64>()
    }

    fn fd_grad(a: &TensorArchive<f64>, x: &[Vec<f64>], target: usize, h: f64) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; x[0].len()]; x.len()];
        for i in 0..x.len() {
            for j in 0..x[0].len() {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[i][j] += h;
                dn[i][j] -= h;
                let fu = forward_logits_with_embedding_override(&up, a).unwrap()[target];
                let fd = forward_logits_with_embedding_override(&dn, a).unwrap()[target];
                out[i][j] = (fu - fd) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = stub();
        let ids = [3u32, 9, 1, 14, 7];
        let m = saliency(&ids, &a, "stub").unwrap();
        let x = token_embeddings(&a, &ids).unwrap();
        let (_, g) = logit_gradient(&a, &x, m.predicted_id as usize).unwrap();
        let fd = fd_grad(&a, &x, m.predicted_id as usize, 1e-3);
        for (gr, fr) in g.iter().zip(&fd) {
            for (&u, &v) in gr.iter().zip(fr) {
                assert!((u - v).abs() <= 1e-3 * u.abs().max(v.abs()).max(1e-6), "{u} vs {v}");
            }
        }
        let s: f64 = m.percentages.iter().sum();
        assert!((s - 100.0).abs() < 1e-6);
        assert!(m.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn single_token_takes_everything() {
        let m = saliency(&[5], &stub(), "stub").unwrap();
        assert_eq!(m.percentages, vec![100.0]);
    }

    #[test]
    fn final_gain_scaling_keeps_ranking() {
        let a = stub();
        let ids = [2u32, 11, 4, 19];
        let m1 = saliency(&ids, &a, "a").unwrap();
        let mut b = a.clone();
        b.get_mut(names::LN_F_W).unwrap().data.iter_mut().for_each(|v| *v *= 3.0);
        b.get_mut(names::LN_F_B).unwrap().data.iter_mut().for_each(|v| *v *= 3.0);
        let m2 = saliency_for_target(&ids, &b, "b", m1.predicted_id).unwrap();
        let rank = |m: &SaliencyMap| {
            let mut idx: Vec<usize> = (0..m.weights.len()).collect();
            idx.sort_by(|&i, &j| m.weights[j].total_cmp(&m.weights[i]));
            idx
        };
        assert_eq!(rank(&m1), rank(&m2));
        for (p, q) in m1.percentages.iter().zip(&m2.percentages) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        assert_eq!(to_percentages(&[0.0, 0.0]), vec![50.0, 50.0]);
    }

    #[test]
    fn html_escapes_tokens() {
        let mut m = saliency(&[1, 2], &stub(), "m<1>").unwrap();
        m.tokens = vec!["<a>".into(), "&".into()];
        let h = html_page(&[&m]);
        assert!(h.contains("&lt;a&gt;") && h.contains("&amp;") && h.contains("m&lt;1&gt;"));
        assert!(m.render().lines().count() == 3);
    }
}
