//! The model abstraction driven by the decoding loops.

mod toy;

use serde::{Deserialize, Serialize};

pub use toy::{
    build_toy_backend, Drift, LayerPreference, PlantedCase, SyntheticProfile, ToyBackend,
    ToyModelSpec,
};

use crate::error::Result;
use crate::types::{ModelDims, StepIntrospection, TokenId, VisualSpan};

/// How intermediate-layer logits were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitMode {
    /// Final norm and shared unembedding applied to each hidden state.
    LogitLens,
    /// A dedicated output head per layer.
    PerLayerHead,
    /// Planted by a generator; no network involved.
    Synthetic,
}

impl LogitMode {
    pub fn to_byte(self) -> u8 {
        match self {
            LogitMode::LogitLens => 0,
            LogitMode::PerLayerHead => 1,
            LogitMode::Synthetic => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(LogitMode::LogitLens),
            1 => Some(LogitMode::PerLayerHead),
            2 => Some(LogitMode::Synthetic),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogitMode::LogitLens => "logit_lens",
            LogitMode::PerLayerHead => "per_layer_head",
            LogitMode::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub dims: ModelDims,
    pub visual_span: VisualSpan,
    pub logit_mode: LogitMode,
    pub name: String,
}

/// A single-stream source of per-step introspection.
///
/// `step` returns what the model exposes when predicting the token that
/// follows `context`. Implementations count every call as one forward pass.
pub trait Backend {
    fn descriptor(&self) -> &BackendDescriptor;

    fn step(&mut self, context: &[TokenId]) -> Result<StepIntrospection>;

    fn forward_pass_count(&self) -> u64;

    fn dims(&self) -> ModelDims {
        self.descriptor().dims
    }
}

impl<B: Backend + ?Sized> Backend for &mut B {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn step(&mut self, context: &[TokenId]) -> Result<StepIntrospection> {
        (**self).step(context)
    }

    fn forward_pass_count(&self) -> u64 {
        (**self).forward_pass_count()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn step(&mut self, context: &[TokenId]) -> Result<StepIntrospection> {
        (**self).step(context)
    }

    fn forward_pass_count(&self) -> u64 {
        (**self).forward_pass_count()
    }
}
