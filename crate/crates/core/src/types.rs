//! Domain types shared by the decoding engine.
//!
//! Everything here is an immutable value once built. Shape and range checks
//! live in [`validate_introspection`]; the constructors only enforce what is
//! needed to index safely.

use serde::{Deserialize, Serialize};

use crate::anchoring::VasProfile;
use crate::error::{Error, Result};

pub type TokenId = u32;

/// Slack allowed above 1.0 for summed attention mass (f32 accumulation).
pub const MASS_TOLERANCE: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
}

impl ModelDims {
    pub fn new(num_layers: usize, num_heads: usize, vocab_size: usize) -> Result<Self> {
        let dims = Self {
            num_layers,
            num_heads,
            vocab_size,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidDims("num_layers must be >= 1".into()));
        }
        if self.num_heads == 0 {
            return Err(Error::InvalidDims("num_heads must be >= 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidDims("vocab_size must be >= 2".into()));
        }
        Ok(())
    }

    pub fn final_layer(&self) -> usize {
        self.num_layers - 1
    }
}

/// Context positions holding visual tokens. Always sorted and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<u32>", into = "Vec<u32>")]
pub struct VisualSpan {
    indices: Vec<u32>,
}

impl VisualSpan {
    pub fn new(indices: impl IntoIterator<Item = u32>) -> Self {
        let mut indices: Vec<u32> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn range(start: u32, end: u32) -> Self {
        Self {
            indices: (start..end).collect(),
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, position: usize) -> bool {
        u32::try_from(position)
            .map(|p| self.indices.binary_search(&p).is_ok())
            .unwrap_or(false)
    }

    pub fn validate(&self, context_len: usize) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last as usize >= context_len => Err(Error::InvalidVisualSpan(format!(
                "index {last} is outside a context of length {context_len}"
            ))),
            _ => Ok(()),
        }
    }
}

impl From<Vec<u32>> for VisualSpan {
    fn from(indices: Vec<u32>) -> Self {
        Self::new(indices)
    }
}

impl From<VisualSpan> for Vec<u32> {
    fn from(span: VisualSpan) -> Self {
        span.indices
    }
}

/// Vocabulary logits emitted by one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(pub Vec<f32>);

impl LogitVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.0.iter().position(|x| !x.is_finite()) {
            Some(index) => Err(Error::NonFinite { what, index }),
            None => Ok(()),
        }
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> TokenId {
        argmax_lowest(&self.0) as TokenId
    }
}

pub(crate) fn argmax_lowest(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-layer, per-head attention mass on the visual span, stored layer-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    num_layers: usize,
    num_heads: usize,
    visual_mass: Vec<f32>,
}

impl AttentionSummary {
    pub fn new(num_layers: usize, num_heads: usize, visual_mass: Vec<f32>) -> Result<Self> {
        let expected = num_layers * num_heads;
        if visual_mass.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "visual_mass",
                expected,
                got: visual_mass.len(),
            });
        }
        Ok(Self {
            num_layers,
            num_heads,
            visual_mass,
        })
    }

    pub fn zeros(num_layers: usize, num_heads: usize) -> Self {
        Self {
            num_layers,
            num_heads,
            visual_mass: vec![0.0; num_layers * num_heads],
        }
    }

    /// Sums raw attention rows `rows[layer][head][key]` over the visual span.
    pub fn from_attention_rows(rows: &[Vec<Vec<f32>>], span: &VisualSpan) -> Result<Self> {
        let num_layers = rows.len();
        let num_heads = rows.first().map_or(0, Vec::len);
        let mut visual_mass = Vec::with_capacity(num_layers * num_heads);
        for layer in rows {
            if layer.len() != num_heads {
                return Err(Error::ShapeMismatch {
                    what: "attention heads",
                    expected: num_heads,
                    got: layer.len(),
                });
            }
            for row in layer {
                span.validate(row.len())?;
                let mass: f32 = span.indices().iter().map(|&k| row[k as usize]).sum();
                visual_mass.push(mass);
            }
        }
        Self::new(num_layers, num_heads, visual_mass)
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn get(&self, layer: usize, head: usize) -> f32 {
        self.visual_mass[layer * self.num_heads + head]
    }

    pub fn layer(&self, layer: usize) -> &[f32] {
        let start = layer * self.num_heads;
        &self.visual_mass[start..start + self.num_heads]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.visual_mass
    }
}

/// Everything a backend exposes for one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepIntrospection {
    /// One logit vector per layer; the last entry is the final layer.
    pub layer_logits: Vec<LogitVector>,
    pub attention: AttentionSummary,
}

impl StepIntrospection {
    pub fn num_layers(&self) -> usize {
        self.layer_logits.len()
    }

    pub fn final_logits(&self) -> &LogitVector {
        self.layer_logits
            .last()
            .expect("validated step has at least one layer")
    }

    pub fn layer(&self, layer: usize) -> &LogitVector {
        &self.layer_logits[layer]
    }
}

pub fn validate_introspection(step: &StepIntrospection, dims: &ModelDims) -> Result<()> {
    dims.validate()?;
    if step.layer_logits.len() != dims.num_layers {
        return Err(Error::ShapeMismatch {
            what: "layer_logits",
            expected: dims.num_layers,
            got: step.layer_logits.len(),
        });
    }
    for logits in &step.layer_logits {
        if logits.len() != dims.vocab_size {
            return Err(Error::ShapeMismatch {
                what: "vocab",
                expected: dims.vocab_size,
                got: logits.len(),
            });
        }
        logits.check_finite("layer logits")?;
    }
    let attention = &step.attention;
    if attention.num_layers() != dims.num_layers {
        return Err(Error::ShapeMismatch {
            what: "attention layers",
            expected: dims.num_layers,
            got: attention.num_layers(),
        });
    }
    if attention.num_heads() != dims.num_heads {
        return Err(Error::ShapeMismatch {
            what: "attention heads",
            expected: dims.num_heads,
            got: attention.num_heads(),
        });
    }
    for (i, &mass) in attention.as_slice().iter().enumerate() {
        if !mass.is_finite() {
            return Err(Error::NonFinite {
                what: "visual_mass",
                index: i,
            });
        }
        if !(0.0..=1.0 + MASS_TOLERANCE).contains(&mass) {
            return Err(Error::MassOutOfRange {
                layer: i / dims.num_heads,
                head: i % dims.num_heads,
                value: mass,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowFallback {
    /// No shadow anchor; the step runs with beta treated as zero.
    #[default]
    SkipSuppression,
    /// Use layer 0 as the shadow and flag the selection as a fallback.
    UseLayerZero,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampling {
    #[default]
    Greedy,
    Temperature {
        tau: f32,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Weight on the spotlight (peak visual attention) logits.
    pub alpha: f32,
    /// Weight on shadow suppression and the matching amplification.
    pub beta: f32,
    /// Plausibility threshold relative to the top final-layer probability.
    pub gamma: f32,
    pub enforce_shadow_before_spotlight: bool,
    pub shadow_fallback: ShadowFallback,
    pub tie_break: TieBreak,
    pub sampling: Sampling,
    /// Contrast layer for the DoLa-style baseline; `None` means `L / 4`.
    pub dola_early_layer: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.2,
            gamma: 0.1,
            enforce_shadow_before_spotlight: true,
            shadow_fallback: ShadowFallback::SkipSuppression,
            tie_break: TieBreak::LowestIndex,
            sampling: Sampling::Greedy,
            dola_early_layer: None,
        }
    }
}

impl DecodeConfig {
    /// Binary yes/no QA recipe: tight plausibility threshold.
    pub fn pope() -> Self {
        Self {
            gamma: 0.9,
            ..Self::default()
        }
    }

    /// All correction terms disabled; decoding collapses to greedy.
    pub fn reduced() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if let Sampling::Temperature { tau, .. } = self.sampling {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "temperature must be > 0, got {tau}"
                )));
            }
        }
        Ok(())
    }
}

/// Spotlight and shadow layers chosen for one step (0-based indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSelection {
    pub spotlight: usize,
    pub shadow: Option<usize>,
    pub vas_profile: VasProfile,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistribution {
    pub probs: Vec<f32>,
}

impl ProbabilityDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().map(|&p| p as f64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateMask {
    pub allowed: Vec<bool>,
    pub count: usize,
}

impl CandidateMask {
    pub fn all(vocab_size: usize) -> Self {
        Self {
            allowed: vec![true; vocab_size],
            count: vocab_size,
        }
    }

    pub fn from_allowed(allowed: Vec<bool>) -> Self {
        let count = allowed.iter().filter(|&&a| a).count();
        Self { allowed, count }
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.allowed.get(token as usize).copied().unwrap_or(false)
    }

    pub fn is_subset_of(&self, other: &CandidateMask) -> bool {
        self.allowed.len() == other.allowed.len()
            && self
                .allowed
                .iter()
                .zip(&other.allowed)
                .all(|(&a, &b)| !a || b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Present only for strategies that select anchors.
    pub anchors: Option<AnchorSelection>,
    pub mask_count: usize,
    pub chosen_token: TokenId,
    pub p_final_of_chosen: f32,
    /// Probability of the chosen token under the strategy's own output
    /// distribution; equals `p_final_of_chosen` for greedy-style strategies.
    pub p_daid_of_chosen: f32,
}
