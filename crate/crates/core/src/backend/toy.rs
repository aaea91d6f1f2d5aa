//! Deterministic synthetic backend.
//!
//! This is not a trained network. Every step plants a target visual-attention
//! curve (with zero-mean head jitter) and a set of additive per-layer logit
//! biases on top of seeded uniform noise. All randomness is derived from the
//! profile seed, the context length and the last few context tokens, so a
//! given context always yields bit-identical introspection and the per-step
//! cost stays `O(L * H + L * V)` no matter how long the context grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendDescriptor, LogitMode};
use crate::error::{Error, Result};
use crate::types::{
    AttentionSummary, LogitVector, ModelDims, StepIntrospection, TokenId, VisualSpan,
};

/// Upper bound on per-head deviation from the planted curve.
pub const MAX_HEAD_JITTER: f32 = 0.05;

/// Number of trailing context tokens that feed the per-step seed.
const CONTEXT_KEY_TOKENS: usize = 4;

/// Additive logit bias on one token, at one layer or (when `layer` is absent) at every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPreference {
    #[serde(default)]
    pub layer: Option<usize>,
    pub token: TokenId,
    pub bias: f32,
}

impl LayerPreference {
    pub fn at(layer: usize, token: TokenId, bias: f32) -> Self {
        Self {
            layer: Some(layer),
            token,
            bias,
        }
    }

    pub fn everywhere(token: TokenId, bias: f32) -> Self {
        Self {
            layer: None,
            token,
            bias,
        }
    }
}

/// Preferences that apply only when the context ends in `trigger`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCase {
    pub trigger: TokenId,
    /// The token a grounded model should emit for this case.
    #[serde(default)]
    pub gold: Option<TokenId>,
    #[serde(default)]
    pub preferences: Vec<LayerPreference>,
}

/// Layer-wise drift between a grounded and a hallucinated token.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    #[default]
    None,
    /// The grounded token's bias ramps up to `strength` at `peak_layer` and
    /// then decays geometrically by `decay` per layer. The hallucinated token
    /// sits at `prior` up to the peak and then climbs linearly so that it
    /// beats the grounded token by `final_margin` at the final layer.
    SeeingThenForgetting {
        peak_layer: usize,
        decay: f32,
        grounded_token: TokenId,
        hallucinated_token: TokenId,
        #[serde(default = "default_strength")]
        strength: f32,
        #[serde(default)]
        prior: f32,
        #[serde(default = "default_final_margin")]
        final_margin: f32,
    },
}

fn default_strength() -> f32 {
    3.0
}

fn default_final_margin() -> f32 {
    0.2
}

fn default_jitter() -> f32 {
    MAX_HEAD_JITTER
}

fn default_visual_tokens() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub seed: u64,
    /// Target head-averaged visual attention per layer.
    pub vas_curve: Vec<f32>,
    /// Extra curves cycled with `vas_curve` by context length, for profiles
    /// whose anchors move from step to step.
    #[serde(default)]
    pub vas_alternates: Vec<Vec<f32>>,
    #[serde(default = "default_jitter")]
    pub head_jitter: f32,
    /// Half-width of the uniform noise added to every logit.
    #[serde(default)]
    pub logit_noise: f32,
    #[serde(default)]
    pub token_preference_by_layer: Vec<LayerPreference>,
    #[serde(default)]
    pub cases: Vec<PlantedCase>,
    #[serde(default)]
    pub drift: Drift,
    /// The first `visual_tokens` context positions form the visual span.
    #[serde(default = "default_visual_tokens")]
    pub visual_tokens: u32,
    #[serde(default)]
    pub max_context: Option<usize>,
}

impl SyntheticProfile {
    pub fn new(seed: u64, vas_curve: Vec<f32>) -> Self {
        Self {
            seed,
            vas_curve,
            vas_alternates: Vec::new(),
            head_jitter: MAX_HEAD_JITTER,
            logit_noise: 0.0,
            token_preference_by_layer: Vec::new(),
            cases: Vec::new(),
            drift: Drift::None,
            visual_tokens: default_visual_tokens(),
            max_context: None,
        }
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        dims.validate()?;
        let bad = |msg: String| Err(Error::InvalidProfile(msg));
        for (i, curve) in std::iter::once(&self.vas_curve)
            .chain(&self.vas_alternates)
            .enumerate()
        {
            if curve.len() != dims.num_layers {
                return bad(format!(
                    "vas curve {i} has {} entries, model has {} layers",
                    curve.len(),
                    dims.num_layers
                ));
            }
            if let Some(v) = curve.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return bad(format!("vas curve {i} entry {v} outside [0, 1]"));
            }
        }
        if !(0.0..=MAX_HEAD_JITTER).contains(&self.head_jitter) {
            return bad(format!("head_jitter must lie in [0, {MAX_HEAD_JITTER}]"));
        }
        if !(self.logit_noise.is_finite() && self.logit_noise >= 0.0) {
            return bad("logit_noise must be finite and >= 0".into());
        }
        let check_pref = |p: &LayerPreference| -> Result<()> {
            if p.layer.is_some_and(|l| l >= dims.num_layers) {
                return bad(format!("preference layer {:?} out of range", p.layer));
            }
            if p.token as usize >= dims.vocab_size {
                return bad(format!("preference token {} out of range", p.token));
            }
            if !p.bias.is_finite() {
                return bad("preference bias must be finite".into());
            }
            Ok(())
        };
        for p in &self.token_preference_by_layer {
            check_pref(p)?;
        }
        for case in &self.cases {
            if case.trigger as usize >= dims.vocab_size
                || case.gold.is_some_and(|g| g as usize >= dims.vocab_size)
            {
                return bad(format!(
                    "case with trigger {} references an unknown token",
                    case.trigger
                ));
            }
            for p in &case.preferences {
                check_pref(p)?;
            }
        }
        if let Drift::SeeingThenForgetting {
            peak_layer,
            decay,
            grounded_token,
            hallucinated_token,
            strength,
            prior,
            final_margin,
        } = self.drift
        {
            if peak_layer >= dims.num_layers {
                return bad(format!("peak_layer {peak_layer} out of range"));
            }
            if !(decay > 0.0 && decay <= 1.0) {
                return bad(format!("decay must lie in (0, 1], got {decay}"));
            }
            if grounded_token as usize >= dims.vocab_size
                || hallucinated_token as usize >= dims.vocab_size
            {
                return bad("drift token out of range".into());
            }
            if grounded_token == hallucinated_token {
                return bad("grounded and hallucinated tokens must differ".into());
            }
            if ![strength, prior, final_margin]
                .iter()
                .all(|x| x.is_finite())
            {
                return bad("drift parameters must be finite".into());
            }
        }
        Ok(())
    }

    /// The token a grounded model should produce, when the profile plants one.
    pub fn gold_token(&self) -> Option<TokenId> {
        match self.drift {
            Drift::SeeingThenForgetting { grounded_token, .. } => Some(grounded_token),
            Drift::None => None,
        }
    }

    /// Visual placeholder tokens followed by `text`.
    pub fn prompt(&self, text: &[TokenId]) -> Vec<TokenId> {
        let mut prompt = vec![0; self.visual_tokens as usize];
        prompt.extend_from_slice(text);
        prompt
    }

    fn curve_for(&self, context_len: usize) -> &[f32] {
        let n = 1 + self.vas_alternates.len();
        match context_len % n {
            0 => &self.vas_curve,
            i => &self.vas_alternates[i - 1],
        }
    }

    fn drift_bias(&self, layer: usize, num_layers: usize, out: &mut [f32]) {
        let Drift::SeeingThenForgetting {
            peak_layer,
            decay,
            grounded_token,
            hallucinated_token,
            strength,
            prior,
            final_margin,
        } = self.drift
        else {
            return;
        };
        let grounded = |l: usize| -> f32 {
            if l <= peak_layer {
                strength * (l + 1) as f32 / (peak_layer + 1) as f32
            } else {
                strength * decay.powi((l - peak_layer) as i32)
            }
        };
        let last = num_layers - 1;
        let hallucinated = if layer <= peak_layer || last == peak_layer {
            prior
        } else {
            let target = grounded(last) + final_margin;
            prior + (target - prior) * (layer - peak_layer) as f32 / (last - peak_layer) as f32
        };
        out[grounded_token as usize] += grounded(layer);
        out[hallucinated_token as usize] += hallucinated;
    }
}

/// Model shape plus profile, the on-disk form used by `--toy-profile`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub profile: SyntheticProfile,
}

impl ToyModelSpec {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            vocab_size: self.vocab_size,
        }
    }

    pub fn build(&self) -> Result<ToyBackend> {
        let mut backend = build_toy_backend(self.profile.clone(), self.dims())?;
        if let Some(name) = &self.name {
            backend.descriptor.name = name.clone();
        }
        Ok(backend)
    }
}

#[derive(Debug, Clone)]
pub struct ToyBackend {
    profile: SyntheticProfile,
    descriptor: BackendDescriptor,
    forward_passes: u64,
}

pub fn build_toy_backend(profile: SyntheticProfile, dims: ModelDims) -> Result<ToyBackend> {
    profile.validate(&dims)?;
    let descriptor = BackendDescriptor {
        dims,
        visual_span: VisualSpan::range(0, profile.visual_tokens),
        logit_mode: LogitMode::Synthetic,
        name: "toy".into(),
    };
    Ok(ToyBackend {
        profile,
        descriptor,
        forward_passes: 0,
    })
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl ToyBackend {
    pub fn profile(&self) -> &SyntheticProfile {
        &self.profile
    }

    fn context_key(&self, context: &[TokenId]) -> u64 {
        let tail = &context[context.len().saturating_sub(CONTEXT_KEY_TOKENS)..];
        let mut key = splitmix(self.profile.seed ^ (context.len() as u64).rotate_left(32));
        for &t in tail {
            key = splitmix(key ^ t as u64);
        }
        key
    }

    fn attention(&self, context_len: usize) -> AttentionSummary {
        let dims = self.descriptor.dims;
        let (layers, heads) = (dims.num_layers, dims.num_heads);
        if self.descriptor.visual_span.is_empty() {
            return AttentionSummary::zeros(layers, heads);
        }
        // Head offsets depend on the step only, so layers with equal targets
        // get identical rows and tie exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(
            splitmix(self.profile.seed ^ 0xA77E_0000) ^ context_len as u64,
        );
        let raw: Vec<f32> = (0..heads)
            .map(|_| rng.random_range(-1.0f32..=1.0))
            .collect();
        let mean = raw.iter().sum::<f32>() / heads as f32;
        let offsets: Vec<f32> = raw.iter().map(|r| r - mean).collect();

        let curve = self.profile.curve_for(context_len);
        let mut mass = Vec::with_capacity(layers * heads);
        for &target in curve {
            let amp = (self.profile.head_jitter * 0.5)
                .min(target * 0.5)
                .min((1.0 - target) * 0.5);
            mass.extend(offsets.iter().map(|o| (target + amp * o).clamp(0.0, 1.0)));
        }
        AttentionSummary::new(layers, heads, mass).expect("shape fixed by dims")
    }

    fn logits(&self, context: &[TokenId]) -> Vec<LogitVector> {
        let dims = self.descriptor.dims;
        let vocab = dims.vocab_size;
        let noise = self.profile.logit_noise;
        let mut rng = ChaCha8Rng::seed_from_u64(self.context_key(context));
        let last = context.last().copied();
        let active_cases: Vec<&PlantedCase> = self
            .profile
            .cases
            .iter()
            .filter(|c| Some(c.trigger) == last)
            .collect();

        (0..dims.num_layers)
            .map(|layer| {
                let mut values = if noise > 0.0 {
                    (0..vocab)
                        .map(|_| rng.random_range(-noise..=noise))
                        .collect()
                } else {
                    vec![0.0f32; vocab]
                };
                let prefs = self
                    .profile
                    .token_preference_by_layer
                    .iter()
                    .chain(active_cases.iter().flat_map(|c| &c.preferences));
                for p in prefs {
                    if p.layer.is_none_or(|l| l == layer) {
                        values[p.token as usize] += p.bias;
                    }
                }
                self.profile.drift_bias(layer, dims.num_layers, &mut values);
                LogitVector::new(values)
            })
            .collect()
    }
}

impl Backend for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn step(&mut self, context: &[TokenId]) -> Result<StepIntrospection> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        if let Some(max) = self.profile.max_context {
            if context.len() > max {
                return Err(Error::ContextTooLong {
                    len: context.len(),
                    max,
                });
            }
        }
        self.descriptor.visual_span.validate(context.len())?;
        self.forward_passes += 1;
        Ok(StepIntrospection {
            layer_logits: self.logits(context),
            attention: self.attention(context.len()),
        })
    }

    fn forward_pass_count(&self) -> u64 {
        self.forward_passes
    }
}
