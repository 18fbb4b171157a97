//! Argument groups shared by several subcommands, and the loaders behind
//! them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use gptd::engine::{ModelConfig, TensorArchive};
use gptd::surgery::{DegradationSpec, LayerSet, Location, Selection, ValueScope};
use gptd::textlab::GenConfig;
use gptd::tokenizer::Tokenizer;

use crate::output::Output;

pub const COOKIE_THEFT_PROMPTS: &str = include_str!("../../../assets/prompts/cookie_theft.txt");
pub const PICTURE_PROMPTS: &str = include_str!("../../../assets/prompts/picture_description.txt");

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// Checkpoint directory (model.safetensors + optional config.json) or a
    /// .safetensors file.
    #[arg(long, env = "GPTD_MODEL_DIR")]
    pub model: PathBuf,
    /// config.json to use with a bare .safetensors file [default: GPT-2 small].
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Directory with vocab.json and merges.txt [default: bundled GPT-2 vocabulary].
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
}

pub fn load_archive(path: &Path, config: Option<&Path>) -> Result<TensorArchive<f32>> {
    let a = if path.is_dir() {
        TensorArchive::load_dir(path)
    } else {
        let cfg = match config {
            Some(c) => ModelConfig::from_json_file(c)?,
            None => ModelConfig::gpt2_small(),
        };
        TensorArchive::load(path, cfg)
    };
    a.with_context(|| format!("loading weights from {}", path.display()))
}

impl ModelArgs {
    pub fn load(&self, out: &mut Output) -> Result<TensorArchive<f32>> {
        out.input(&self.model)?;
        if let Some(c) = &self.model_config {
            out.input(c)?;
        }
        load_archive(&self.model, self.model_config.as_deref())
    }

    pub fn tokenizer(&self, out: &mut Output) -> Result<TokenizerRef> {
        match &self.tokenizer {
            Some(dir) => {
                out.input(&dir.join("vocab.json"))?;
                out.input(&dir.join("merges.txt"))?;
                Ok(TokenizerRef::Owned(Box::new(Tokenizer::from_dir(dir)?)))
            }
            None => Ok(TokenizerRef::Bundled(Tokenizer::bundled())),
        }
    }
}

pub enum TokenizerRef {
    Bundled(&'static Tokenizer),
    Owned(Box<Tokenizer>),
}

impl std::ops::Deref for TokenizerRef {
    type Target = Tokenizer;

    fn deref(&self) -> &Tokenizer {
        match self {
            TokenizerRef::Bundled(t) => t,
            TokenizerRef::Owned(t) => t,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SelectionArg {
    First,
    Random,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScopeArg {
    PerHead,
    WholeMatrix,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LocationArg {
    Value,
    Embedding,
}

/// How much of each masked tensor to zero, and which part.
#[derive(Args, Debug, Clone, Serialize)]
pub struct MaskArgs {
    /// Fraction of rows (embedding) or value columns to zero.
    #[arg(long, default_value_t = 0.5)]
    pub proportion: f64,
    #[arg(long, value_enum, default_value_t = SelectionArg::First)]
    pub selection: SelectionArg,
    /// Seed for `--selection random`.
    #[arg(long, default_value_t = 0)]
    pub mask_seed: u64,
    /// Whether the proportion applies within each head or to the whole value block.
    #[arg(long, value_enum, default_value_t = ScopeArg::PerHead)]
    pub value_scope: ScopeArg,
}

impl MaskArgs {
    pub fn spec(&self, location: Location, layers: LayerSet) -> DegradationSpec {
        DegradationSpec {
            location,
            proportion: self.proportion,
            selection: match self.selection {
                SelectionArg::First => Selection::FirstFraction,
                SelectionArg::Random => Selection::RandomFraction { seed: self.mask_seed },
            },
            layers,
            value_scope: match self.value_scope {
                ScopeArg::PerHead => ValueScope::PerHead,
                ScopeArg::WholeMatrix => ValueScope::WholeMatrix,
            },
        }
    }

    /// Value-column spec with no layers; searches fill in the layers.
    pub fn base_spec(&self) -> DegradationSpec {
        self.spec(Location::AttentionValueColumns, LayerSet::empty())
    }
}

/// A degradation given either as a spec or as a degraded checkpoint.
#[derive(Args, Debug, Clone, Serialize)]
pub struct SpecArgs {
    /// JSON degradation spec (overrides the flags below).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LocationArg::Value)]
    pub location: LocationArg,
    /// Decoder layers whose value columns are masked, e.g. `0-8`, `0,3,5`, `none`.
    #[arg(long)]
    pub layers: Option<LayerSet>,
    #[command(flatten)]
    pub mask: MaskArgs,
}

impl SpecArgs {
    /// `None` when no degradation was asked for.
    pub fn resolve(&self, out: Option<&mut Output>) -> Result<Option<DegradationSpec>> {
        if let Some(p) = &self.spec {
            if let Some(out) = out {
                out.input(p)?;
            }
            let s = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let spec = serde_json::from_str(&s).with_context(|| format!("parsing spec {}", p.display()))?;
            return Ok(Some(spec));
        }
        Ok(match (self.location, self.layers) {
            (LocationArg::Embedding, _) => Some(self.mask.spec(Location::EmbeddingRows, LayerSet::empty())),
            (LocationArg::Value, Some(l)) => Some(self.mask.spec(Location::AttentionValueColumns, l)),
            (LocationArg::Value, None) => None,
        })
    }

    pub fn require(&self, out: Option<&mut Output>) -> Result<DegradationSpec> {
        match self.resolve(out)? {
            Some(s) => Ok(s),
            None => bail!("no degradation given: pass --layers, --location embedding or --spec"),
        }
    }
}

/// The degraded side of a model pair.
#[derive(Args, Debug, Clone, Serialize)]
pub struct PairArgs {
    /// Degraded checkpoint written by `gptd degrade` (instead of a spec).
    #[arg(long, conflicts_with_all = ["spec", "layers"])]
    pub degraded: Option<PathBuf>,
    #[command(flatten)]
    pub spec: SpecArgs,
}

pub enum Degraded {
    Spec(DegradationSpec),
    Archive(TensorArchive<f32>),
}

impl PairArgs {
    pub fn resolve(&self, out: &mut Output) -> Result<Option<Degraded>> {
        if let Some(p) = &self.degraded {
            out.input(p)?;
            return Ok(Some(Degraded::Archive(load_archive(p, None)?)));
        }
        let spec = self.spec.resolve(Some(out))?;
        if let Some(s) = &spec {
            out.resolved("spec", s)?;
        }
        Ok(spec.map(Degraded::Spec))
    }

    /// The degraded weights; fails when no degradation was given.
    pub fn weights(&self, base: &TensorArchive<f32>, out: &mut Output) -> Result<TensorArchive<f32>> {
        match self.resolve(out)? {
            Some(d) => d.weights(base),
            None => bail!("no degraded model given: pass --degraded, --layers, --location embedding or --spec"),
        }
    }
}

impl Degraded {
    /// An identity spec (value columns, no layers) yields a plain copy.
    pub fn weights(self, base: &TensorArchive<f32>) -> Result<TensorArchive<f32>> {
        match self {
            Degraded::Archive(a) => Ok(a),
            Degraded::Spec(spec) => {
                if spec.location == Location::AttentionValueColumns && spec.layers.is_empty() {
                    spec.check(base.config.n_layers, true)?;
                    return Ok(base.clone());
                }
                Ok(gptd::surgery::degrade(base, &spec)?.0)
            }
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 5)]
    pub beams: usize,
    #[arg(long, default_value_t = 20)]
    pub min_new_tokens: usize,
    #[arg(long, default_value_t = 100)]
    pub max_new_tokens: usize,
    #[arg(long, default_value_t = 0.9)]
    pub top_p: f64,
    #[arg(long, default_value_t = 1.3)]
    pub repetition_penalty: f64,
    /// Hypotheses kept per model before pairing.
    #[arg(long, default_value_t = 5)]
    pub n_return: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl GenArgs {
    pub fn config(&self) -> Result<GenConfig> {
        let c = GenConfig {
            beams: self.beams,
            min_new_tokens: self.min_new_tokens,
            max_new_tokens: self.max_new_tokens,
            top_p: self.top_p,
            repetition_penalty: self.repetition_penalty,
            n_return: self.n_return,
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Non-blank lines of a prompt file, or of a bundled default.
pub fn read_prompts(path: Option<&Path>, default: &str, out: &mut Output) -> Result<Vec<String>> {
    let text = match path {
        Some(p) => {
            out.input(p)?;
            std::fs::read_to_string(p).with_context(|| format!("reading prompts {}", p.display()))?
        }
        None => default.to_string(),
    };
    let prompts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if prompts.is_empty() {
        bail!("prompt file has no non-blank lines");
    }
    Ok(prompts)
}
