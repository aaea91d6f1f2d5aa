//! Layer-wise probing: decode greedily from every layer's logits and compare
//! against planted gold tokens, alongside the per-layer visual attention.
//!
//! The "hallucination proxy" column is disagreement with the planted gold
//! token. It is a stand-in, not a formal hallucination rate.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchoring::compute_vas;
use crate::backend::{Backend, SyntheticProfile};
use crate::error::{Error, Result};
use crate::types::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub layer: usize,
    pub agreement: f64,
    pub hallucination_proxy: f64,
    pub mean_vas: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// `layer_tokens[layer][prompt]`: greedy token from that layer.
    pub layer_tokens: Vec<Vec<TokenId>>,
}

impl ProbeReport {
    pub fn tokens_at(&self, layer: usize) -> &[TokenId] {
        &self.layer_tokens[layer]
    }

    pub fn agreement_curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.agreement).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "layer,agreement,hallucination_proxy,mean_vas")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.layer, r.agreement, r.hallucination_proxy, r.mean_vas
            )?;
        }
        Ok(())
    }
}

/// One forward pass per prompt; every layer is probed from the same step.
pub fn layer_probe<B: Backend + ?Sized>(
    backend: &mut B,
    prompts: &[Vec<TokenId>],
    gold: &[TokenId],
) -> Result<ProbeReport> {
    if prompts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if prompts.len() != gold.len() {
        return Err(Error::ShapeMismatch {
            what: "probe gold tokens",
            expected: prompts.len(),
            got: gold.len(),
        });
    }
    let layers = backend.dims().num_layers;
    let mut layer_tokens = vec![Vec::with_capacity(prompts.len()); layers];
    let mut hits = vec![0usize; layers];
    let mut vas_sum = vec![0.0f64; layers];
    for (prompt, &g) in prompts.iter().zip(gold) {
        let step = backend.step(prompt)?;
        let vas = compute_vas(&step.attention);
        for layer in 0..layers {
            let token = step.layer(layer).argmax();
            layer_tokens[layer].push(token);
            hits[layer] += usize::from(token == g);
            vas_sum[layer] += vas.0[layer] as f64;
        }
    }
    let n = prompts.len() as f64;
    let rows = (0..layers)
        .map(|layer| ProbeRow {
            layer,
            agreement: hits[layer] as f64 / n,
            hallucination_proxy: (prompts.len() - hits[layer]) as f64 / n,
            mean_vas: vas_sum[layer] / n,
        })
        .collect();
    Ok(ProbeReport { rows, layer_tokens })
}

/// Deterministic probe prompts: the profile's visual block followed by
/// `text_len` random text tokens.
pub fn probe_prompts(
    profile: &SyntheticProfile,
    vocab_size: usize,
    count: usize,
    text_len: usize,
) -> Vec<Vec<TokenId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed ^ 0x5052_4F42);
    (0..count)
        .map(|_| {
            let text: Vec<TokenId> = (0..text_len.max(1))
                .map(|_| rng.random_range(0..vocab_size as TokenId))
                .collect();
            profile.prompt(&text)
        })
        .collect()
}
