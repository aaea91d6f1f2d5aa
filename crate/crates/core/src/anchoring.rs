//! Visual attention scoring and spotlight/shadow anchor selection.
//!
//! The visual attention score (VAS) of a layer is the head-averaged attention
//! mass the current query places on visual positions. The spotlight is the
//! layer with the highest score; the shadow is the lowest-scoring layer below
//! it. Both argmax and argmin break ties toward the lowest layer index.

use serde::{Deserialize, Serialize};

use crate::types::{
    AnchorSelection, AttentionSummary, DecodeConfig, ShadowFallback, StepIntrospection,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VasProfile(pub Vec<f32>);

impl VasProfile {
    pub fn scores(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn compute_vas(attention: &AttentionSummary) -> VasProfile {
    let heads = attention.num_heads() as f32;
    VasProfile(
        (0..attention.num_layers())
            .map(|l| attention.layer(l).iter().sum::<f32>() / heads)
            .collect(),
    )
}

pub fn select_spotlight(vas: &VasProfile) -> usize {
    let scores = vas.scores();
    let mut best = 0;
    for (l, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = l;
        }
    }
    best
}

fn argmin_where(scores: &[f32], eligible: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (l, &s) in scores.iter().enumerate() {
        if !eligible(l) {
            continue;
        }
        match best {
            Some(b) if s >= scores[b] => {}
            _ => best = Some(l),
        }
    }
    best
}

/// Shadow layer plus whether the fallback policy produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShadowChoice {
    pub layer: Option<usize>,
    pub fallback_used: bool,
}

pub fn select_shadow(vas: &VasProfile, spotlight: usize, cfg: &DecodeConfig) -> ShadowChoice {
    let found = if cfg.enforce_shadow_before_spotlight {
        argmin_where(&vas.scores()[..spotlight], |_| true)
    } else {
        argmin_where(vas.scores(), |l| l != spotlight)
    };
    match found {
        Some(layer) => ShadowChoice {
            layer: Some(layer),
            fallback_used: false,
        },
        None => match cfg.shadow_fallback {
            ShadowFallback::SkipSuppression => ShadowChoice {
                layer: None,
                fallback_used: true,
            },
            ShadowFallback::UseLayerZero => ShadowChoice {
                layer: Some(0),
                fallback_used: true,
            },
        },
    }
}

pub fn select_anchors(step: &StepIntrospection, cfg: &DecodeConfig) -> AnchorSelection {
    let vas = compute_vas(&step.attention);
    let spotlight = select_spotlight(&vas);
    let shadow = select_shadow(&vas, spotlight, cfg);
    AnchorSelection {
        spotlight,
        shadow: shadow.layer,
        vas_profile: vas,
        fallback_used: shadow.fallback_used,
    }
}
