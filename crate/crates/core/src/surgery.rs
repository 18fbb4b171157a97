//! Building GPT-D: zeroing token-embedding rows or attention value columns
//! of a checkpoint according to a declarative [`DegradationSpec`].
//!
//! A spec is first turned into a [`MaskPlan`] (which tensor, which axis,
//! which indices). [`degrade`] applies a plan to a copy of the weights;
//! [`MaskSession`] applies it in place and restores the original values
//! afterwards, which is what the pattern search uses.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::archive::names;
use crate::engine::{ModelConfig, TensorArchive};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    EmbeddingRows,
    AttentionValueColumns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Selection {
    FirstFraction,
    RandomFraction { seed: u64 },
}

/// Which value columns a proportion refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueScope {
    /// The proportion applies within each head's `head_dim` value columns.
    #[default]
    PerHead,
    /// The proportion applies to the whole `d_model`-wide value block.
    WholeMatrix,
}

/// A set of decoder layer indices (at most 64 layers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LayerSet(u64);

impl LayerSet {
    pub const fn empty() -> Self {
        Self(0)
    }

    pub const fn from_bits(bits: u64) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn range(lo: usize, hi_inclusive: usize) -> Self {
        (lo..=hi_inclusive).collect()
    }

    pub fn contains(self, layer: usize) -> bool {
        layer < 64 && self.0 & (1 << layer) != 0
    }

    pub fn insert(&mut self, layer: usize) {
        assert!(layer < 64, "layer index {layer} beyond LayerSet capacity");
        self.0 |= 1 << layer;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&l| self.contains(l))
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Lowest layer in the set.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }
}

impl FromIterator<usize> for LayerSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = Self::empty();
        for l in iter {
            s.insert(l);
        }
        s
    }
}

/// Compact notation: `0-8`, `0-6,8`, `none`.
impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layers = self.to_vec();
        if layers.is_empty() {
            return f.write_str("none");
        }
        let mut parts = Vec::new();
        let mut i = 0;
        while i < layers.len() {
            let mut j = i;
            while j + 1 < layers.len() && layers[j + 1] == layers[j] + 1 {
                j += 1;
            }
            parts.push(if i == j {
                layers[i].to_string()
            } else {
                format!("{}-{}", layers[i], layers[j])
            });
            i = j + 1;
        }
        f.write_str(&parts.join(","))
    }
}

impl std::str::FromStr for LayerSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::empty());
        }
        let mut set = Self::empty();
        for part in s.split(',') {
            let part = part.trim();
            let parse = |x: &str| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("bad layer index `{x}`"))
                    .and_then(|v| {
                        if v < 64 {
                            Ok(v)
                        } else {
                            Err(format!("layer index {v} out of range"))
                        }
                    })
            };
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b) = (parse(a)?, parse(b)?);
                    if a > b {
                        return Err(format!("descending range `{part}`"));
                    }
                    (a..=b).for_each(|l| set.insert(l));
                }
                None => set.insert(parse(part)?),
            }
        }
        Ok(set)
    }
}

impl Serialize for LayerSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_vec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LayerSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if let Some(bad) = v.iter().find(|&&l| l >= 64) {
            return Err(serde::de::Error::custom(format!("layer index {bad} out of range")));
        }
        Ok(v.into_iter().collect())
    }
}

/// Where and how much of the checkpoint to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub location: Location,
    pub proportion: f64,
    pub selection: Selection,
    /// Ignored for [`Location::EmbeddingRows`].
    pub layers: LayerSet,
    #[serde(default)]
    pub value_scope: ValueScope,
}

impl DegradationSpec {
    /// Half of every head's value columns, first columns first.
    pub fn value_columns(layers: LayerSet) -> Self {
        Self {
            location: Location::AttentionValueColumns,
            proportion: 0.5,
            selection: Selection::FirstFraction,
            layers,
            value_scope: ValueScope::PerHead,
        }
    }

    pub fn embedding_rows(proportion: f64, selection: Selection) -> Self {
        Self {
            location: Location::EmbeddingRows,
            proportion,
            selection,
            layers: LayerSet::empty(),
            value_scope: ValueScope::PerHead,
        }
    }

    pub fn with_layers(self, layers: LayerSet) -> Self {
        Self { layers, ..self }
    }

    /// Checks the spec against a model with `n_layers` decoder layers. An
    /// empty layer set is accepted only when `allow_identity` is set (the
    /// empty pattern of an exhaustive search).
    pub fn check(&self, n_layers: usize, allow_identity: bool) -> Result<()> {
        if !(self.proportion > 0.0 && self.proportion <= 1.0) {
            return Err(Error::InvalidSpec {
                field: "proportion",
                reason: format!("{} is outside (0, 1]", self.proportion),
            });
        }
        if self.location == Location::AttentionValueColumns {
            if self.layers.is_empty() && !allow_identity {
                return Err(Error::InvalidSpec {
                    field: "layers",
                    reason: "value-column masking needs at least one layer".into(),
                });
            }
            if let Some(bad) = self.layers.iter().find(|&l| l >= n_layers) {
                return Err(Error::InvalidSpec {
                    field: "layers",
                    reason: format!("layer {bad} is outside 0..{n_layers}"),
                });
            }
        }
        Ok(())
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        self.check(n_layers, false)
    }
}

/// `⌊proportion × dim⌋`.
pub fn masked_count(proportion: f64, dim: usize) -> usize {
    (proportion * dim as f64).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rows,
    Columns,
}

/// Indices of one tensor to zero along one axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMask {
    pub tensor: String,
    pub axis: Axis,
    pub indices: Vec<usize>,
}

pub type MaskPlan = Vec<TensorMask>;

fn choose(n: usize, k: usize, selection: Selection, stream: u64) -> Vec<usize> {
    match selection {
        Selection::FirstFraction => (0..k).collect(),
        Selection::RandomFraction { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut idx = sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

/// Resolves a spec into concrete tensor indices for a given architecture.
/// Random selections draw from an independent stream per layer, so a
/// layer's columns do not depend on which other layers are listed.
pub fn plan(spec: &DegradationSpec, cfg: &ModelConfig, allow_identity: bool) -> Result<MaskPlan> {
    spec.check(cfg.n_layers, allow_identity)?;
    match spec.location {
        Location::EmbeddingRows => {
            let k = masked_count(spec.proportion, cfg.vocab_size);
            Ok(vec![TensorMask {
                tensor: names::WTE.to_string(),
                axis: Axis::Rows,
                indices: choose(cfg.vocab_size, k, spec.selection, 0),
            }])
        }
        Location::AttentionValueColumns => {
            let d = cfg.d_model;
            let hd = cfg.head_dim();
            Ok(spec
                .layers
                .iter()
                .map(|l| {
                    let stream = l as u64 + 1;
                    let local: Vec<usize> = match spec.value_scope {
                        ValueScope::PerHead => {
                            let k = masked_count(spec.proportion, hd);
                            let mut cols = Vec::with_capacity(k * cfg.n_heads);
                            let mut rng_stream = stream << 16;
                            for h in 0..cfg.n_heads {
                                rng_stream += 1;
                                cols.extend(
                                    choose(hd, k, spec.selection, rng_stream)
                                        .into_iter()
                                        .map(|c| h * hd + c),
                                );
                            }
                            cols
                        }
                        ValueScope::WholeMatrix => {
                            choose(d, masked_count(spec.proportion, d), spec.selection, stream)
                        }
                    };
                    TensorMask {
                        tensor: names::qkv_weight(l),
                        axis: Axis::Columns,
                        // The value block is the last third of the fused projection.
                        indices: local.into_iter().map(|c| 2 * d + c).collect(),
                    }
                })
                .collect())
        }
    }
}

/// Flat positions touched by `mask` in a row-major `shape`.
fn flat_positions(mask: &TensorMask, shape: &[usize]) -> Vec<usize> {
    let (rows, cols) = (shape[0], shape[1]);
    match mask.axis {
        Axis::Rows => mask
            .indices
            .iter()
            .flat_map(|&r| (r * cols)..((r + 1) * cols))
            .collect(),
        Axis::Columns => (0..rows)
            .flat_map(|r| mask.indices.iter().map(move |&c| r * cols + c))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedTensor {
    pub tensor: String,
    pub axis: Axis,
    /// Half-open index ranges along `axis`.
    pub ranges: Vec<(usize, usize)>,
    pub count: usize,
    pub parameters_zeroed: usize,
}

/// Audit record of what a degradation zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub spec: DegradationSpec,
    pub tensors: Vec<MaskedTensor>,
    pub total_parameters_zeroed: usize,
}

fn ranges(indices: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some((_, end)) if *end == i => *end += 1,
            _ => out.push((i, i + 1)),
        }
    }
    out
}

fn report_for(spec: &DegradationSpec, plan: &MaskPlan, cfg: &ModelConfig) -> MaskReport {
    let tensors: Vec<MaskedTensor> = plan
        .iter()
        .map(|m| {
            // wte rows and fused-QKV columns both span d_model entries.
            let other = cfg.d_model;
            MaskedTensor {
                tensor: m.tensor.clone(),
                axis: m.axis,
                ranges: ranges(&m.indices),
                count: m.indices.len(),
                parameters_zeroed: m.indices.len() * other,
            }
        })
        .collect();
    let total = tensors.iter().map(|t| t.parameters_zeroed).sum();
    MaskReport {
        spec: *spec,
        tensors,
        total_parameters_zeroed: total,
    }
}

fn apply_plan<T: Scalar>(archive: &mut TensorArchive<T>, plan: &MaskPlan) -> Vec<Vec<T>> {
    plan.iter()
        .map(|m| {
            let t = archive
                .get_mut(&m.tensor)
                .unwrap_or_else(|| panic!("validated archive lacks `{}`", m.tensor));
            let pos = flat_positions(m, &t.shape);
            pos.iter()
                .map(|&p| std::mem::replace(&mut t.data[p], T::zero()))
                .collect()
        })
        .collect()
}

/// Returns a degraded copy of `weights`; the source is left untouched.
pub fn degrade<T: Scalar>(
    weights: &TensorArchive<T>,
    spec: &DegradationSpec,
) -> Result<(TensorArchive<T>, MaskReport)> {
    let plan = plan(spec, &weights.config, false)?;
    let mut out = weights.clone();
    apply_plan(&mut out, &plan);
    Ok((out, report_for(spec, &plan, &weights.config)))
}

/// In-place application of a mask that restores the original values when
/// dropped (or on [`MaskSession::restore`]). Holding the session holds the
/// archive's unique borrow, so no forward pass can run on it while a mask
/// is being applied or restored.
pub struct MaskSession<'a, T: Scalar> {
    archive: &'a mut TensorArchive<T>,
    plan: MaskPlan,
    saved: Vec<Vec<T>>,
}

impl<'a, T: Scalar> MaskSession<'a, T> {
    /// Applies `spec`; the empty layer set is accepted and masks nothing.
    pub fn apply(archive: &'a mut TensorArchive<T>, spec: &DegradationSpec) -> Result<Self> {
        let plan = plan(spec, &archive.config, true)?;
        let saved = apply_plan(archive, &plan);
        Ok(Self {
            archive,
            plan,
            saved,
        })
    }

    pub fn weights(&self) -> &TensorArchive<T> {
        self.archive
    }

    pub fn report(&self, spec: &DegradationSpec) -> MaskReport {
        report_for(spec, &self.plan, &self.archive.config)
    }

    pub fn restore(self) {}
}

impl<T: Scalar> Drop for MaskSession<'_, T> {
    fn drop(&mut self) {
        for (m, saved) in self.plan.iter().zip(&self.saved) {
            let t = self.archive.get_mut(&m.tensor).expect("tensor present");
            for (p, v) in flat_positions(m, &t.shape).into_iter().zip(saved) {
                t.data[p] = *v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Individual,
    Cumulative,
    Combination,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "individual" => Ok(Self::Individual),
            "cumulative" => Ok(Self::Cumulative),
            "combination" => Ok(Self::Combination),
            other => Err(format!(
                "unknown strategy `{other}` (individual|cumulative|combination)"
            )),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Individual => "individual",
            Self::Cumulative => "cumulative",
            Self::Combination => "combination",
        })
    }
}

/// Layer subsets visited by a search over a model with `n_layers` layers.
/// Combination is every subset (empty set included) in bitmask order.
pub fn enumerate_pattern(strategy: Strategy, n_layers: usize) -> Vec<LayerSet> {
    match strategy {
        Strategy::Individual => (0..n_layers).map(|l| LayerSet::range(l, l)).collect(),
        Strategy::Cumulative => (0..n_layers).map(|l| LayerSet::range(0, l)).collect(),
        Strategy::Combination => {
            assert!(n_layers < 64, "combination search needs fewer than 64 layers");
            (0..1u64 << n_layers).map(LayerSet::from_bits).collect()
        }
    }
}
