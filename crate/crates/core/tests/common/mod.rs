//! Shared test support: an independent f64 reference decoder, random input
//! generators and a confusion-matrix oracle for the binary-QA metrics.
#![allow(dead_code)]

use std::path::PathBuf;

use daid_core::backend::{Drift, LayerPreference, SyntheticProfile, ToyModelSpec};
use daid_core::evalkit::{Answer, BinaryQaRecord};
use daid_core::{AttentionSummary, LogitVector, StepIntrospection, VisualSpan};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// A step as a model would produce it: raw attention rows over the whole
/// context plus per-layer logits.
#[derive(Debug, Clone)]
pub struct RawStep {
    /// `rows[layer][head][key]`, each row sums to one.
    pub rows: Vec<Vec<Vec<f32>>>,
    pub span: Vec<u32>,
    pub logits: Vec<Vec<f32>>,
}

impl RawStep {
    pub fn introspection(&self) -> StepIntrospection {
        let span = VisualSpan::new(self.span.iter().copied());
        StepIntrospection {
            layer_logits: self.logits.iter().cloned().map(LogitVector::new).collect(),
            attention: AttentionSummary::from_attention_rows(&self.rows, &span).unwrap(),
        }
    }
}

pub fn random_raw_step<R: Rng>(
    rng: &mut R,
    max_layers: usize,
    max_heads: usize,
    max_vocab: usize,
) -> RawStep {
    let layers = rng.random_range(1..=max_layers);
    let heads = rng.random_range(1..=max_heads);
    let vocab = rng.random_range(2..=max_vocab);
    let keys = rng.random_range(2..=12usize);
    let mut positions: Vec<u32> = (0..keys as u32).collect();
    positions.shuffle(rng);
    let span_len = rng.random_range(1..keys);
    let mut span = positions[..span_len].to_vec();
    span.sort_unstable();

    let rows = (0..layers)
        .map(|_| {
            (0..heads)
                .map(|_| {
                    let raw: Vec<f64> = (0..keys)
                        .map(|_| rng.random::<f64>().powi(3) + 1e-3)
                        .collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|x| (x / total) as f32).collect()
                })
                .collect()
        })
        .collect();
    let scale = rng.random_range(0.5f32..6.0);
    let logits = (0..layers)
        .map(|_| {
            (0..vocab)
                .map(|_| rng.random_range(-scale..scale))
                .collect()
        })
        .collect();
    RawStep { rows, span, logits }
}

/// A random step built directly from per-head visual mass.
pub fn random_step<R: Rng>(
    rng: &mut R,
    max_layers: usize,
    max_heads: usize,
    max_vocab: usize,
) -> StepIntrospection {
    let layers = rng.random_range(1..=max_layers);
    let heads = rng.random_range(1..=max_heads);
    let vocab = rng.random_range(2..=max_vocab);
    let mass = (0..layers * heads).map(|_| rng.random::<f32>()).collect();
    StepIntrospection {
        layer_logits: (0..layers)
            .map(|_| LogitVector::new((0..vocab).map(|_| rng.random_range(-5.0f32..5.0)).collect()))
            .collect(),
        attention: AttentionSummary::new(layers, heads, mass).unwrap(),
    }
}

pub mod oracle {
    use super::RawStep;

    #[derive(Debug, Clone)]
    pub struct OracleStep {
        pub vas: Vec<f64>,
        pub spotlight: usize,
        pub shadow: Option<usize>,
        pub allowed: Vec<bool>,
        pub probs: Vec<f64>,
        pub token: usize,
        /// Set when an f32 implementation could legitimately decide a
        /// comparison the other way (near-tied scores or a probability on
        /// the plausibility threshold).
        pub ambiguous: bool,
    }

    const NEAR: f64 = 1e-5;

    pub fn vas(rows: &[Vec<Vec<f32>>], span: &[u32]) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in rows {
            let mut layer_total = 0.0;
            for head in layer {
                let mut mass = 0.0;
                for (k, &a) in head.iter().enumerate() {
                    if span.contains(&(k as u32)) {
                        mass += a as f64;
                    }
                }
                layer_total += mass;
            }
            out.push(layer_total / layer.len() as f64);
        }
        out
    }

    fn naive_softmax(x: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|v| v / z).collect()
    }

    pub fn decode(
        step: &RawStep,
        alpha: f64,
        beta: f64,
        gamma: f64,
        constrained: bool,
    ) -> OracleStep {
        let vas = vas(&step.rows, &step.span);
        let layers = vas.len();
        let mut ambiguous = false;

        let mut spotlight = 0;
        for l in 1..layers {
            if vas[l] > vas[spotlight] {
                spotlight = l;
            }
        }
        for l in 0..layers {
            if l != spotlight && (vas[l] - vas[spotlight]).abs() < NEAR {
                ambiguous = true;
            }
        }

        let candidates: Vec<usize> = if constrained {
            (0..spotlight).collect()
        } else {
            (0..layers).filter(|&l| l != spotlight).collect()
        };
        let mut shadow: Option<usize> = None;
        for &l in &candidates {
            match shadow {
                Some(s) if vas[l] >= vas[s] => {}
                _ => shadow = Some(l),
            }
        }
        if let Some(s) = shadow {
            for &l in &candidates {
                if l != s && (vas[l] - vas[s]).abs() < NEAR {
                    ambiguous = true;
                }
            }
        }

        let f: Vec<f64> = step.logits[layers - 1].iter().map(|&x| x as f64).collect();
        let a: Vec<f64> = step.logits[spotlight].iter().map(|&x| x as f64).collect();
        let vocab = f.len();
        let mut calibrated = vec![0.0; vocab];
        for v in 0..vocab {
            calibrated[v] = match shadow {
                Some(s) => (f[v] + alpha * a[v]) * (1.0 + beta) - beta * step.logits[s][v] as f64,
                None => f[v] + alpha * a[v],
            };
        }

        let p_final = naive_softmax(&f);
        let mut top = 0.0f64;
        for &p in &p_final {
            if p > top {
                top = p;
            }
        }
        let threshold = gamma * top;
        let mut allowed = vec![false; vocab];
        for v in 0..vocab {
            allowed[v] = p_final[v] >= threshold;
            if gamma > 0.0 && (p_final[v] - threshold).abs() <= NEAR * top {
                ambiguous = true;
            }
        }

        let mut z = 0.0;
        for v in 0..vocab {
            if allowed[v] {
                z += calibrated[v].exp();
            }
        }
        let mut probs = vec![0.0; vocab];
        for v in 0..vocab {
            if allowed[v] {
                probs[v] = calibrated[v].exp() / z;
            }
        }

        let mut token = usize::MAX;
        for v in 0..vocab {
            if allowed[v] && (token == usize::MAX || calibrated[v] > calibrated[token]) {
                token = v;
            }
        }
        for v in 0..vocab {
            if allowed[v] && v != token && (calibrated[v] - calibrated[token]).abs() < NEAR {
                ambiguous = true;
            }
        }

        OracleStep {
            vas,
            spotlight,
            shadow,
            allowed,
            probs,
            token,
            ambiguous,
        }
    }

    /// (accuracy, f1) with `yes` as the positive class, by explicit counting.
    pub fn binary_qa(pairs: &[(bool, bool)]) -> (f64, f64) {
        let (mut tp, mut fp, mut fn_, mut tn) = (0u32, 0u32, 0u32, 0u32);
        for &(pred, gold) in pairs {
            match (pred, gold) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let total = (tp + fp + fn_ + tn) as f64;
        let accuracy = (tp + tn) as f64 / total;
        if tp + fp == 0 || tp + fn_ == 0 {
            return (accuracy, 0.0);
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        let f1 = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        (accuracy, f1)
    }

    /// (chair_i, chair_s) by explicit counting over lowercase strings.
    pub fn chair(captions: &[(Vec<String>, Vec<String>)]) -> (f64, Option<f64>) {
        let mut mentioned = 0usize;
        let mut bad = 0usize;
        let mut bad_captions = 0usize;
        for (m, g) in captions {
            let mut seen: Vec<String> = Vec::new();
            let gold: Vec<String> = g.iter().map(|s| s.trim().to_lowercase()).collect();
            let mut any = false;
            for obj in m {
                let obj = obj.trim().to_lowercase();
                if seen.contains(&obj) {
                    continue;
                }
                mentioned += 1;
                if !gold.contains(&obj) {
                    bad += 1;
                    any = true;
                }
                seen.push(obj);
            }
            bad_captions += usize::from(any);
        }
        let ci = if mentioned == 0 {
            0.0
        } else {
            bad as f64 / mentioned as f64
        };
        let cs = (!captions.is_empty()).then(|| bad_captions as f64 / captions.len() as f64);
        (ci, cs)
    }
}

pub fn to_records(pairs: &[(bool, bool)]) -> Vec<BinaryQaRecord> {
    let ans = |b: bool| if b { Answer::Yes } else { Answer::No };
    pairs
        .iter()
        .map(|&(p, g)| BinaryQaRecord {
            predicted: ans(p),
            gold: ans(g),
        })
        .collect()
}

/// A random toy model covering the profile features: preferences, drift,
/// alternating curves and noise.
pub fn random_toy_spec<R: Rng>(rng: &mut R, seed: u64) -> ToyModelSpec {
    let layers = rng.random_range(2..=10usize);
    let heads = rng.random_range(1..=4usize);
    let vocab = rng.random_range(4..=48usize);
    let curve = |rng: &mut R| {
        (0..layers)
            .map(|_| rng.random_range(0.02f32..0.95))
            .collect::<Vec<_>>()
    };
    let mut profile = SyntheticProfile::new(seed, curve(rng));
    if rng.random_bool(0.3) {
        profile.vas_alternates = vec![curve(rng)];
    }
    profile.logit_noise = rng.random_range(0.0f32..2.5);
    for _ in 0..rng.random_range(0..4) {
        let token = rng.random_range(0..vocab as u32);
        let bias = rng.random_range(-2.0f32..2.0);
        profile
            .token_preference_by_layer
            .push(if rng.random_bool(0.5) {
                LayerPreference::everywhere(token, bias)
            } else {
                LayerPreference::at(rng.random_range(0..layers), token, bias)
            });
    }
    if rng.random_bool(0.5) {
        let grounded = rng.random_range(0..vocab as u32);
        let hallucinated = (grounded + 1 + rng.random_range(0..vocab as u32 - 1)) % vocab as u32;
        profile.drift = Drift::SeeingThenForgetting {
            peak_layer: rng.random_range(0..layers),
            decay: rng.random_range(0.3f32..0.95),
            grounded_token: grounded,
            hallucinated_token: hallucinated,
            strength: rng.random_range(0.5f32..4.0),
            prior: rng.random_range(0.0f32..1.5),
            final_margin: rng.random_range(0.0f32..1.0),
        };
    }
    ToyModelSpec {
        num_layers: layers,
        num_heads: heads,
        vocab_size: vocab,
        name: None,
        profile,
    }
}

pub fn load_spec(name: &str) -> ToyModelSpec {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}
