//! Named weight tensors of a GPT-2 checkpoint in the safetensors container.

use std::collections::BTreeMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of columns of a 2-D tensor (length of a 1-D tensor).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }
}

/// Canonical tensor names, without the `transformer.` prefix some exports use.
pub mod names {
    pub const WTE: &str = "wte.weight";
    pub const WPE: &str = "wpe.weight";
    pub const LN_F_W: &str = "ln_f.weight";
    pub const LN_F_B: &str = "ln_f.bias";

    pub fn layer(l: usize, suffix: &str) -> String {
        format!("h.{l}.{suffix}")
    }

    pub fn qkv_weight(l: usize) -> String {
        layer(l, "attn.c_attn.weight")
    }
}

pub(crate) const LAYER_TENSORS: [&str; 12] = [
    "ln_1.weight",
    "ln_1.bias",
    "attn.c_attn.weight",
    "attn.c_attn.bias",
    "attn.c_proj.weight",
    "attn.c_proj.bias",
    "ln_2.weight",
    "ln_2.bias",
    "mlp.c_fc.weight",
    "mlp.c_fc.bias",
    "mlp.c_proj.weight",
    "mlp.c_proj.bias",
];

/// Every tensor the decoder reads, with its required shape.
pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let ff = cfg.d_ff();
    let mut out = vec![
        (names::WTE.to_string(), vec![cfg.vocab_size, d]),
        (names::WPE.to_string(), vec![cfg.context_window, d]),
    ];
    for l in 0..cfg.n_layers {
        for suffix in LAYER_TENSORS {
            let shape = match suffix {
                "attn.c_attn.weight" => vec![d, 3 * d],
                "attn.c_attn.bias" => vec![3 * d],
                "attn.c_proj.weight" => vec![d, d],
                "mlp.c_fc.weight" => vec![d, ff],
                "mlp.c_fc.bias" => vec![ff],
                "mlp.c_proj.weight" => vec![ff, d],
                _ => vec![d],
            };
            out.push((names::layer(l, suffix), shape));
        }
    }
    out.push((names::LN_F_W.to_string(), vec![d]));
    out.push((names::LN_F_B.to_string(), vec![d]));
    out
}

fn canonical_name(raw: &str) -> &str {
    raw.strip_prefix("transformer.").unwrap_or(raw)
}

/// Decoder weights keyed by canonical tensor name.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive<T = f32> {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> TensorArchive<T> {
    /// Builds an archive from already-converted tensors and validates it.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let archive = Self { config, tensors };
        archive.validate()?;
        Ok(archive)
    }

    /// Checks names, shapes and finiteness against `self.config`.
    pub fn validate(&self) -> Result<()> {
        for (name, shape) in expected_shapes(&self.config) {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    actual: t.shape.clone(),
                });
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Panicking accessor for names guaranteed by [`Self::validate`].
    pub(crate) fn t(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("validated archive lacks `{name}`"))
    }

    pub(crate) fn layer_t(&self, l: usize, suffix: &str) -> &[T] {
        &self.t(&names::layer(l, suffix)).data
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> TensorArchive<U> {
        TensorArchive {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        Tensor {
                            shape: t.shape.clone(),
                            data: t.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// True when both archives hold the same names and bit-identical values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((ka, a), (kb, b))| {
                ka == kb && tensor_bit_eq(a, b)
            })
    }
}

pub(crate) fn tensor_bit_eq<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    a.shape == b.shape
        && a.data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| x.to_f64().unwrap().to_bits() == y.to_f64().unwrap().to_bits())
}

impl TensorArchive<f32> {
    /// Parses a safetensors buffer. Extra tensors (tied `lm_head.weight`,
    /// cached attention-mask buffers) are ignored.
    pub fn from_safetensors_bytes(bytes: &[u8], config: ModelConfig) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let wanted: BTreeMap<String, Vec<usize>> = expected_shapes(&config).into_iter().collect();
        let mut tensors = BTreeMap::new();
        for (raw, view) in st.tensors() {
            let name = canonical_name(&raw);
            if !wanted.contains_key(name) {
                continue;
            }
            let data = decode_view(name, &view)?;
            tensors.insert(
                name.to_string(),
                Tensor {
                    shape: view.shape().to_vec(),
                    data,
                },
            );
        }
        Self::from_tensors(config, tensors)
    }

    pub fn load(path: &Path, config: ModelConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_safetensors_bytes(&bytes, config)
    }

    /// Loads `model.safetensors` from a checkpoint directory, taking the
    /// architecture from `config.json` when present and GPT-2 small otherwise.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("config.json");
        let config = if cfg_path.exists() {
            ModelConfig::from_json_file(&cfg_path)?
        } else {
            ModelConfig::gpt2_small()
        };
        Self::load(&dir.join("model.safetensors"), config)
    }

    pub fn to_safetensors_bytes(&self) -> Result<Vec<u8>> {
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let raw = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (k.clone(), t.shape.clone(), raw)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(k, shape, raw)| {
                TensorView::new(Dtype::F32, shape.clone(), raw)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, &None).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_safetensors_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn decode_view(name: &str, view: &TensorView<'_>) -> Result<Vec<f32>> {
    let raw = view.data();
    match view.dtype() {
        Dtype::F32 => Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()),
        Dtype::F64 => Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
            .collect()),
        Dtype::BF16 => Ok(raw
            .chunks_exact(2)
            .map(|c| f32::from_bits((u16::from_le_bytes([c[0], c[1]]) as u32) << 16))
            .collect()),
        other => Err(Error::CorruptCheckpoint(format!(
            "tensor `{name}` has unsupported dtype {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::synthetic::random_archive;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 8,
            n_heads: 2,
            d_model: 8,
            vocab_size: 11,
            context_window: 16,
            ln_eps: 1e-5,
            eos_token_id: 10,
        }
    }

    #[test]
    fn round_trips_through_safetensors() {
        let a = random_archive(tiny(), 3, 0.1);
        let bytes = a.to_safetensors_bytes().unwrap();
        let b = TensorArchive::from_safetensors_bytes(&bytes, tiny()).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(b.names().filter(|n| n.starts_with("h.")).count(), 8 * 12);
    }

    #[test]
    fn missing_tensor_is_named() {
        let a = random_archive(tiny(), 3, 0.1);
        let mut tensors = a.tensors.clone();
        tensors.remove(&names::qkv_weight(7));
        let err = TensorArchive::from_tensors(tiny(), tensors).unwrap_err();
        assert!(matches!(err, Error::MissingTensor(ref n) if n == "h.7.attn.c_attn.weight"));
    }

    #[test]
    fn shape_mismatch_is_named() {
        let a = random_archive(tiny(), 3, 0.1);
        let mut tensors = a.tensors.clone();
        tensors.insert(names::qkv_weight(2), Tensor::zeros(&[8, 20]));
        match TensorArchive::from_tensors(tiny(), tensors).unwrap_err() {
            Error::ShapeMismatch {
                name,
                expected,
                actual,
            } => {
                assert_eq!(name, "h.2.attn.c_attn.weight");
                assert_eq!(expected, vec![8, 24]);
                assert_eq!(actual, vec![8, 20]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let err = TensorArchive::from_safetensors_bytes(b"not a checkpoint", tiny()).unwrap_err();
        assert!(matches!(err, Error::CorruptCheckpoint(_)));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let a = random_archive(tiny(), 3, 0.1);
        let mut tensors = a.tensors.clone();
        tensors.get_mut(names::LN_F_B).unwrap().data[0] = f32::NAN;
        assert!(matches!(
            TensorArchive::from_tensors(tiny(), tensors),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn prefixed_names_and_extras_are_accepted() {
        let a = random_archive(tiny(), 5, 0.1);
        let raw: Vec<(String, Vec<usize>, Vec<u8>)> = a
            .iter()
            .map(|(k, t)| {
                (
                    format!("transformer.{k}"),
                    t.shape.clone(),
                    t.data.iter().flat_map(|v| v.to_le_bytes()).collect(),
                )
            })
            .chain(std::iter::once((
                "lm_head.weight".to_string(),
                vec![11, 8],
                vec![0u8; 11 * 8 * 4],
            )))
            .collect();
        let views: Vec<_> = raw
            .iter()
            .map(|(k, s, d)| (k.clone(), TensorView::new(Dtype::F32, s.clone(), d).unwrap()))
            .collect();
        let bytes = safetensors::serialize(views, &None).unwrap();
        let b = TensorArchive::from_safetensors_bytes(&bytes, tiny()).unwrap();
        assert!(a.bit_eq(&b));
    }
}
