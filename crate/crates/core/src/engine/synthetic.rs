//! Deterministic stand-in weight sets: seeded random decoders for parity
//! fixtures and tests, and the all-zero decoder whose predictions are
//! uniform over the vocabulary.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::archive::{expected_shapes, Tensor, TensorArchive};
use super::config::ModelConfig;

/// Every matrix and bias is `scale · N(0,1)`; layer-norm gains are
/// `1 + 0.1 · N(0,1)`. Values are drawn in [`expected_shapes`] order, so the
/// archive is a pure function of `(config, seed, scale)`.
pub fn random_archive(config: ModelConfig, seed: u64, scale: f32) -> TensorArchive<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in expected_shapes(&config) {
        let n: usize = shape.iter().product();
        let is_gain = name.ends_with("ln_1.weight")
            || name.ends_with("ln_2.weight")
            || name == "ln_f.weight";
        let data = (0..n)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                if is_gain {
                    1.0 + 0.1 * z
                } else {
                    scale * z
                }
            })
            .collect();
        tensors.insert(name, Tensor { shape, data });
    }
    TensorArchive::from_tensors(config, tensors).expect("generated archive matches its config")
}

/// All weights zero and layer-norm gains one: every next-token distribution
/// is exactly uniform.
pub fn uniform_archive(config: ModelConfig) -> TensorArchive<f32> {
    let mut tensors = BTreeMap::new();
    for (name, shape) in expected_shapes(&config) {
        let mut t = Tensor::zeros(&shape);
        if name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") || name == "ln_f.weight"
        {
            t.data.iter_mut().for_each(|v| *v = 1.0);
        }
        tensors.insert(name, t);
    }
    TensorArchive::from_tensors(config, tensors).expect("generated archive matches its config")
}

/// A small decoder over the full GPT-2 vocabulary, cheap enough for
/// end-to-end tests that go through the real tokenizer.
pub fn tiny_gpt2_config() -> ModelConfig {
    ModelConfig {
        n_layers: 12,
        n_heads: 2,
        d_model: 16,
        vocab_size: 50257,
        context_window: 1024,
        ln_eps: 1e-5,
        eos_token_id: 50256,
    }
}
