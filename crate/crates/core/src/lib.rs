//! Dual-anchor introspective decoding.
//!
//! At every step the engine scores each layer by how much attention it puts on
//! visual positions, picks a *spotlight* layer (most visual attention) and a
//! *shadow* layer (least, below the spotlight), and recalibrates the final
//! logits with both. The result is restricted to tokens the final layer
//! already finds plausible.
//!
//! The crate is model agnostic: anything implementing [`backend::Backend`]
//! can be decoded, including recorded traces ([`traceio`]) and the synthetic
//! [`backend::ToyBackend`].
//!
//! Layer indices are 0-based throughout the API.

pub mod anchoring;
pub mod backend;
pub mod calibration;
pub mod decoder;
pub mod error;
pub mod evalkit;
pub mod par;
pub mod traceio;
pub mod types;

pub use anchoring::{compute_vas, select_anchors, select_shadow, select_spotlight, VasProfile};
pub use backend::{Backend, BackendDescriptor, LogitMode};
pub use calibration::{
    apply_constraint, calibrate_logits, decode_step, plausibility_set, CalibratedDistribution,
};
pub use decoder::{anchor_trace, generate, AnchorPoint, GenerationResult, StopCriteria, Strategy};
pub use error::{Error, Result};
pub use types::*;
