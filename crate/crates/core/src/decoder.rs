//! Generation loops.
//!
//! * `Greedy` takes the final-layer argmax.
//! * `Daid` runs the full dual-anchor step each token.
//! * `DolaLike` contrasts final-layer probabilities with a fixed early layer
//!   over the plausibility set. It borrows the idea of layer contrast; it is
//!   not a faithful DoLa implementation.
//! * `VcdSim` calls the backend twice per token and decodes greedily from the
//!   first call. Its tokens match `Greedy`; it exists to measure the cost of a
//!   second forward pass.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::calibration::{decode_step, masked_argmax, plausibility_from_probs, softmax};
use crate::error::{Error, Result};
use crate::types::{DecodeConfig, Sampling, StepDiagnostics, StepIntrospection, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Daid,
    #[serde(rename = "dola")]
    DolaLike,
    #[serde(rename = "vcdsim")]
    VcdSim,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Greedy,
        Strategy::Daid,
        Strategy::DolaLike,
        Strategy::VcdSim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Daid => "daid",
            Strategy::DolaLike => "dola",
            Strategy::VcdSim => "vcdsim",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "daid" => Ok(Strategy::Daid),
            "dola" => Ok(Strategy::DolaLike),
            "vcdsim" => Ok(Strategy::VcdSim),
            other => Err(format!(
                "unknown strategy '{other}' (expected greedy, daid, dola or vcdsim)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_new_tokens: usize,
    pub stop_token: Option<TokenId>,
}

impl StopCriteria {
    pub fn max_tokens(max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            stop_token: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub tokens: Vec<TokenId>,
    pub per_step: Vec<StepDiagnostics>,
    pub strategy: Strategy,
    pub elapsed_ns: u64,
    pub forward_passes: u64,
}

/// Spotlight and shadow layers chosen at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub spotlight: usize,
    pub shadow: Option<usize>,
}

fn check_shape<B: Backend + ?Sized>(backend: &B, step: &StepIntrospection) -> Result<()> {
    let dims = backend.dims();
    if step.layer_logits.len() != dims.num_layers {
        return Err(Error::ShapeMismatch {
            what: "layer_logits",
            expected: dims.num_layers,
            got: step.layer_logits.len(),
        });
    }
    if step.final_logits().len() != dims.vocab_size {
        return Err(Error::ShapeMismatch {
            what: "vocab",
            expected: dims.vocab_size,
            got: step.final_logits().len(),
        });
    }
    Ok(())
}

fn greedy_diagnostics(step: &StepIntrospection) -> StepDiagnostics {
    let final_logits = step.final_logits();
    let token = final_logits.argmax();
    let p = softmax(final_logits.as_slice())[token as usize];
    StepDiagnostics {
        anchors: None,
        mask_count: final_logits.len(),
        chosen_token: token,
        p_final_of_chosen: p,
        p_daid_of_chosen: p,
    }
}

fn dola_diagnostics(step: &StepIntrospection, cfg: &DecodeConfig) -> StepDiagnostics {
    let layers = step.num_layers();
    let early = cfg.dola_early_layer.unwrap_or(layers / 4).min(layers - 1);
    let p_final = softmax(step.final_logits().as_slice());
    let p_early = softmax(step.layer(early).as_slice());
    let mask = plausibility_from_probs(&p_final, cfg.gamma);
    let contrast: Vec<f32> = p_final.iter().zip(&p_early).map(|(f, e)| f - e).collect();
    let token = masked_argmax(&contrast, &mask);
    StepDiagnostics {
        anchors: None,
        mask_count: mask.count,
        chosen_token: token,
        p_final_of_chosen: p_final[token as usize],
        p_daid_of_chosen: p_final[token as usize],
    }
}

pub fn generate<B: Backend + ?Sized>(
    backend: &mut B,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
    stop: StopCriteria,
    strategy: Strategy,
) -> Result<GenerationResult> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(Error::EmptyContext);
    }
    if stop.max_new_tokens == 0 {
        return Err(Error::InvalidConfig("max_new_tokens must be >= 1".into()));
    }
    backend.descriptor().visual_span.validate(prompt.len())?;

    let seed = match cfg.sampling {
        Sampling::Temperature { seed, .. } => seed,
        Sampling::Greedy => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let passes_before = backend.forward_pass_count();
    let mut context = prompt.to_vec();
    let mut tokens = Vec::with_capacity(stop.max_new_tokens);
    let mut per_step = Vec::with_capacity(stop.max_new_tokens);

    let start = Instant::now();
    for _ in 0..stop.max_new_tokens {
        let step = backend.step(&context)?;
        check_shape(backend, &step)?;
        let diag = match strategy {
            Strategy::Greedy => greedy_diagnostics(&step),
            Strategy::Daid => decode_step(&step, cfg, &mut rng)?.1,
            Strategy::DolaLike => dola_diagnostics(&step, cfg),
            Strategy::VcdSim => {
                let _second = backend.step(&context)?;
                greedy_diagnostics(&step)
            }
        };
        let token = diag.chosen_token;
        tokens.push(token);
        per_step.push(diag);
        context.push(token);
        if stop.stop_token == Some(token) {
            break;
        }
    }
    let elapsed_ns = start.elapsed().as_nanos() as u64;

    Ok(GenerationResult {
        tokens,
        per_step,
        strategy,
        elapsed_ns,
        forward_passes: backend.forward_pass_count() - passes_before,
    })
}

pub fn anchor_trace(result: &GenerationResult) -> Result<Vec<AnchorPoint>> {
    if result.strategy != Strategy::Daid {
        return Err(Error::WrongStrategy(result.strategy.as_str()));
    }
    result
        .per_step
        .iter()
        .map(|d| {
            d.anchors
                .as_ref()
                .map(|a| AnchorPoint {
                    spotlight: a.spotlight,
                    shadow: a.shadow,
                })
                .ok_or(Error::WrongStrategy("daid without anchors"))
        })
        .collect()
}
