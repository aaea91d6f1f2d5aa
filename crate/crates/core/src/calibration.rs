//! Dual-anchor logit calibration and the adaptive plausibility constraint.
//!
//! Calibrated logits are `(final + alpha * spot) * (1 + beta) - beta * shadow`.
//! When no shadow exists for a step the amplification is dropped as well and
//! the result is `final + alpha * spot`. The candidate set keeps tokens whose
//! final-layer probability is at least `gamma` times the top probability; the
//! output distribution is the softmax of the calibrated logits restricted to
//! that set and renormalized.
//!
//! Softmax always subtracts the maximum before exponentiating.

use rand::Rng;

use crate::anchoring::select_anchors;
use crate::error::{Error, Result};
use crate::types::{
    AnchorSelection, CandidateMask, DecodeConfig, LogitVector, ProbabilityDistribution, Sampling,
    StepDiagnostics, StepIntrospection, TokenId,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedDistribution {
    pub dist: ProbabilityDistribution,
    pub mask: CandidateMask,
    pub raw_calibrated_logits: LogitVector,
    /// Sum of `exp(logit - max)` over the candidate set; the divisor used to
    /// renormalize. Always in `[1, mask.count]`.
    pub renorm_constant: f32,
}

pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f32 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

pub fn calibrate_logits(
    final_logits: &LogitVector,
    spot: &LogitVector,
    shadow: Option<&LogitVector>,
    alpha: f32,
    beta: f32,
) -> Result<LogitVector> {
    let vocab = final_logits.len();
    for (what, v) in [("spotlight logits", Some(spot)), ("shadow logits", shadow)] {
        if let Some(v) = v {
            if v.len() != vocab {
                return Err(Error::ShapeMismatch {
                    what,
                    expected: vocab,
                    got: v.len(),
                });
            }
        }
    }
    let f = final_logits.as_slice();
    let s = spot.as_slice();
    let out: Vec<f32> = match shadow {
        Some(shadow) => {
            let amp = 1.0 + beta;
            f.iter()
                .zip(s)
                .zip(shadow.as_slice())
                .map(|((&f, &s), &h)| (f + alpha * s) * amp - beta * h)
                .collect()
        }
        None => f.iter().zip(s).map(|(&f, &s)| f + alpha * s).collect(),
    };
    let out = LogitVector::new(out);
    out.check_finite("calibrated logits")?;
    Ok(out)
}

pub fn plausibility_set(final_logits: &LogitVector, gamma: f32) -> CandidateMask {
    let probs = softmax(final_logits.as_slice());
    plausibility_from_probs(&probs, gamma)
}

pub(crate) fn plausibility_from_probs(probs: &[f32], gamma: f32) -> CandidateMask {
    let max = probs.iter().copied().fold(0.0f32, f32::max);
    let threshold = gamma * max;
    CandidateMask::from_allowed(probs.iter().map(|&p| p >= threshold).collect())
}

pub fn apply_constraint(calibrated: &LogitVector, mask: &CandidateMask) -> CalibratedDistribution {
    let logits = calibrated.as_slice();
    debug_assert_eq!(logits.len(), mask.allowed.len());
    debug_assert!(mask.count >= 1);
    let max = logits
        .iter()
        .zip(&mask.allowed)
        .filter_map(|(&x, &ok)| ok.then_some(x))
        .fold(f32::NEG_INFINITY, f32::max);
    let mut probs: Vec<f32> = logits
        .iter()
        .zip(&mask.allowed)
        .map(|(&x, &ok)| if ok { (x - max).exp() } else { 0.0 })
        .collect();
    let total: f32 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    CalibratedDistribution {
        dist: ProbabilityDistribution { probs },
        mask: mask.clone(),
        raw_calibrated_logits: calibrated.clone(),
        renorm_constant: total,
    }
}

/// Everything computed for a step before a token is picked.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedStep {
    pub anchors: AnchorSelection,
    pub calibrated: CalibratedDistribution,
    pub final_probs: Vec<f32>,
}

pub fn calibrate_step(step: &StepIntrospection, cfg: &DecodeConfig) -> Result<CalibratedStep> {
    let anchors = select_anchors(step, cfg);
    let final_logits = step.final_logits();
    let shadow = anchors.shadow.map(|l| step.layer(l));
    let calibrated = calibrate_logits(
        final_logits,
        step.layer(anchors.spotlight),
        shadow,
        cfg.alpha,
        cfg.beta,
    )?;
    let final_probs = softmax(final_logits.as_slice());
    let mask = plausibility_from_probs(&final_probs, cfg.gamma);
    let calibrated = apply_constraint(&calibrated, &mask);
    Ok(CalibratedStep {
        anchors,
        calibrated,
        final_probs,
    })
}

/// Greedy pick over the candidate set: largest calibrated logit, lowest id on ties.
///
/// Comparing logits rather than probabilities keeps distinct logits distinct
/// even when their exponentials round to the same f32.
pub(crate) fn masked_argmax(logits: &[f32], mask: &CandidateMask) -> TokenId {
    let mut best: Option<usize> = None;
    for (i, (&x, &ok)) in logits.iter().zip(&mask.allowed).enumerate() {
        if !ok {
            continue;
        }
        match best {
            Some(b) if x <= logits[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("candidate mask is never empty") as TokenId
}

pub(crate) fn sample_masked<R: Rng + ?Sized>(
    logits: &[f32],
    mask: &CandidateMask,
    tau: f32,
    rng: &mut R,
) -> TokenId {
    let scaled: Vec<f32> = logits.iter().map(|&x| x / tau).collect();
    let dist = apply_constraint(&LogitVector::new(scaled), mask);
    let u: f32 = rng.random();
    let mut acc = 0.0f32;
    let mut last = 0;
    for (i, &p) in dist.dist.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i as TokenId;
        }
    }
    last as TokenId
}

/// One full calibrated decoding step.
///
/// `rng` is only drawn from under temperature sampling.
pub fn decode_step<R: Rng + ?Sized>(
    step: &StepIntrospection,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<(TokenId, StepDiagnostics)> {
    let CalibratedStep {
        anchors,
        calibrated,
        final_probs,
    } = calibrate_step(step, cfg)?;
    let token = match cfg.sampling {
        Sampling::Greedy => masked_argmax(
            calibrated.raw_calibrated_logits.as_slice(),
            &calibrated.mask,
        ),
        Sampling::Temperature { tau, .. } => sample_masked(
            calibrated.raw_calibrated_logits.as_slice(),
            &calibrated.mask,
            tau,
            rng,
        ),
    };
    let diagnostics = StepDiagnostics {
        anchors: Some(anchors),
        mask_count: calibrated.mask.count,
        chosen_token: token,
        p_final_of_chosen: final_probs[token as usize],
        p_daid_of_chosen: calibrated.dist.probs[token as usize],
    };
    Ok((token, diagnostics))
}

/// Greedy decode of many independent steps, parallel when the `parallel`
/// feature is enabled.
pub fn decode_batch(steps: &[StepIntrospection], cfg: &DecodeConfig) -> Vec<Result<TokenId>> {
    crate::par::map(steps, |s| greedy_token(s, cfg))
}

pub(crate) fn greedy_token(step: &StepIntrospection, cfg: &DecodeConfig) -> Result<TokenId> {
    let c = calibrate_step(step, cfg)?;
    Ok(masked_argmax(
        c.calibrated.raw_calibrated_logits.as_slice(),
        &c.calibrated.mask,
    ))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::types::AttentionSummary;

    fn lv(v: &[f32]) -> LogitVector {
        LogitVector::new(v.to_vec())
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn zero_weights_return_final_exactly() {
        let f = lv(&[1.5, -0.25, 3.0]);
        let out = calibrate_logits(
            &f,
            &lv(&[9.0, 9.0, -9.0]),
            Some(&lv(&[4.0, 1.0, 2.0])),
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(out, f);
        let out = calibrate_logits(&f, &lv(&[9.0, 9.0, -9.0]), None, 0.0, 0.3).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn hand_evaluated_flip() {
        let out = calibrate_logits(
            &lv(&[1.0, 0.0]),
            &lv(&[0.0, 1.0]),
            Some(&lv(&[2.0, 0.0])),
            0.8,
            0.2,
        )
        .unwrap();
        assert!((out.0[0] - 0.8).abs() < 1e-6);
        assert!((out.0[1] - 0.96).abs() < 1e-6);
        assert_eq!(out.argmax(), 1);
    }

    #[test]
    fn missing_shadow_drops_amplification() {
        let out = calibrate_logits(&lv(&[1.0, 0.0]), &lv(&[0.0, 1.0]), None, 0.8, 0.2).unwrap();
        assert_eq!(out.0, vec![1.0, 0.8]);
    }

    #[test]
    fn spot_shift_is_uniform() {
        let f = lv(&[0.3, -1.0, 2.0, 0.5]);
        let s = lv(&[1.0, 0.0, -0.5, 0.25]);
        let shifted = lv(&s.0.iter().map(|x| x + 5.0).collect::<Vec<_>>());
        let h = lv(&[0.2, 0.2, 0.1, 0.0]);
        let a = calibrate_logits(&f, &s, Some(&h), 0.8, 0.2).unwrap();
        let b = calibrate_logits(&f, &shifted, Some(&h), 0.8, 0.2).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((y - x - 4.8).abs() < 1e-5);
        }
        let pa = softmax(&a.0);
        let pb = softmax(&b.0);
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn overflowing_output_is_non_finite() {
        let err = calibrate_logits(&lv(&[f32::MAX, 0.0]), &lv(&[f32::MAX, 0.0]), None, 1.0, 0.0)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 0, .. }));
    }

    #[test]
    fn gamma_extremes() {
        let f = lv(&[0.1, 2.0, 2.0, -1.0]);
        assert_eq!(
            plausibility_set(&f, 1.0).allowed,
            vec![false, true, true, false]
        );
        assert_eq!(plausibility_set(&f, 0.0).count, 4);
    }

    #[test]
    fn threshold_from_probabilities() {
        let mask = plausibility_from_probs(&[0.7, 0.2, 0.1], 0.2);
        assert_eq!(mask.allowed, vec![true, true, false]);
        assert_eq!(mask.count, 2);
        // Same check through logits whose softmax is [0.7, 0.2, 0.1].
        let f = lv(&[0.7f32.ln(), 0.2f32.ln(), 0.1f32.ln()]);
        assert_eq!(plausibility_set(&f, 0.2).count, 2);
    }

    #[test]
    fn full_mask_is_plain_softmax() {
        let c = lv(&[0.5, -0.5, 1.25]);
        let out = apply_constraint(&c, &CandidateMask::all(3));
        let plain = softmax(&c.0);
        for (a, b) in out.dist.probs.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn masked_entries_are_exact_zero() {
        // Reference values: e^0.8 / (e^0.8 + e^0.96) and e^0.96 / (...),
        // evaluated in high precision: 0.460085453..., 0.539914546...
        let c = lv(&[0.8, 0.96, -3.0]);
        let mask = CandidateMask::from_allowed(vec![true, true, false]);
        let out = apply_constraint(&c, &mask);
        assert_eq!(out.dist.probs[2].to_bits(), 0.0f32.to_bits());
        assert!((out.dist.probs[0] as f64 - 0.460_085_453_645).abs() < 1e-6);
        assert!((out.dist.probs[1] as f64 - 0.539_914_546_355).abs() < 1e-6);
        assert!((out.renorm_constant - (1.0 + (-0.16f32).exp())).abs() < 1e-6);
    }

    #[test]
    fn single_candidate_gets_all_mass() {
        let out = apply_constraint(
            &lv(&[-50.0, 3.0, 100.0]),
            &CandidateMask::from_allowed(vec![true, false, false]),
        );
        assert_eq!(out.dist.probs, vec![1.0, 0.0, 0.0]);
        assert_eq!(out.renorm_constant, 1.0);
    }

    fn step(layers: Vec<Vec<f32>>, vas: Vec<f32>) -> StepIntrospection {
        let n = vas.len();
        StepIntrospection {
            layer_logits: layers.into_iter().map(LogitVector::new).collect(),
            attention: AttentionSummary::new(n, 1, vas).unwrap(),
        }
    }

    #[test]
    fn reduced_config_is_greedy() {
        let s = step(
            vec![
                vec![3.0, 0.0, 1.0],
                vec![0.0, 5.0, 0.0],
                vec![0.2, 0.1, 0.3],
            ],
            vec![0.1, 0.9, 0.2],
        );
        let (tok, diag) = decode_step(&s, &DecodeConfig::reduced(), &mut rng()).unwrap();
        assert_eq!(tok, 2);
        assert_eq!(diag.mask_count, 3);
    }

    #[test]
    fn planted_two_token_flip() {
        // Token 0 is hallucinated, token 1 grounded. Final layer: 0.55 vs 0.45.
        let margin = (0.55f32 / 0.45).ln();
        let s = step(
            vec![
                vec![0.0, 0.0],    // layer 0
                vec![1.0, 0.0],    // shadow: language prior on the hallucination
                vec![0.0, 3.0],    // spotlight: grounded
                vec![margin, 0.0], // final
            ],
            vec![0.3, 0.05, 0.7, 0.2],
        );
        let cfg = DecodeConfig::default();
        let (tok, diag) = decode_step(&s, &cfg, &mut rng()).unwrap();
        let anchors = diag.anchors.as_ref().unwrap();
        assert_eq!((anchors.spotlight, anchors.shadow), (2, Some(1)));
        assert_eq!(tok, 1);
        assert!((diag.p_final_of_chosen - 0.45).abs() < 1e-5);
        assert!(diag.p_daid_of_chosen > diag.p_final_of_chosen);
        let greedy = s.final_logits().argmax();
        assert_eq!(greedy, 0);
    }

    #[test]
    fn pope_gamma_narrows_peaked_yes_no() {
        // yes/no vocabulary with a confident final layer.
        let s = step(
            vec![
                vec![0.0, 0.0, -4.0],
                vec![0.0, 2.0, -4.0],
                vec![2.5, 0.0, -4.0],
            ],
            vec![0.1, 0.8, 0.3],
        );
        let (tok, diag) = decode_step(&s, &DecodeConfig::pope(), &mut rng()).unwrap();
        assert_eq!(diag.mask_count, 1);
        assert_eq!(tok, 0);
        assert_eq!(diag.p_daid_of_chosen, 1.0);
    }

    #[test]
    fn temperature_sampling_stays_in_mask() {
        let s = step(
            vec![vec![0.0, 0.0, 0.0, 0.0], vec![1.0, 1.2, -9.0, 0.9]],
            vec![0.2, 0.6],
        );
        let cfg = DecodeConfig {
            sampling: Sampling::Temperature { tau: 1.0, seed: 3 },
            gamma: 0.5,
            ..DecodeConfig::default()
        };
        let mask = plausibility_set(s.final_logits(), 0.5);
        let mut r = rng();
        let mut seen = [0usize; 4];
        for _ in 0..500 {
            let (tok, _) = decode_step(&s, &cfg, &mut r).unwrap();
            assert!(mask.contains(tok));
            seen[tok as usize] += 1;
        }
        assert!(seen.iter().filter(|&&c| c > 0).count() >= 2);
    }

    proptest! {
        #[test]
        fn mask_is_monotone_in_gamma(
            logits in proptest::collection::vec(-6.0f32..6.0, 2..40),
            g1 in 0.0f32..=1.0,
            g2 in 0.0f32..=1.0,
        ) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let f = LogitVector::new(logits);
            let loose = plausibility_set(&f, lo);
            let tight = plausibility_set(&f, hi);
            prop_assert!(tight.count >= 1);
            prop_assert!(tight.is_subset_of(&loose));
            prop_assert!(tight.contains(f.argmax()));
        }

        #[test]
        fn constrained_distribution_is_valid(
            logits in proptest::collection::vec(-30.0f32..30.0, 2..40),
            final_logits in proptest::collection::vec(-6.0f32..6.0, 40),
            gamma in 0.0f32..=1.0,
        ) {
            let n = logits.len();
            let mask = plausibility_set(&LogitVector::new(final_logits[..n].to_vec()), gamma);
            let out = apply_constraint(&LogitVector::new(logits), &mask);
            let total: f64 = out.dist.probs.iter().map(|&p| p as f64).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            for (p, &ok) in out.dist.probs.iter().zip(&mask.allowed) {
                prop_assert!(*p >= 0.0);
                if !ok {
                    prop_assert_eq!(p.to_bits(), 0u32);
                }
            }
            prop_assert!(out.renorm_constant >= 1.0 && out.renorm_constant <= mask.count as f32 + 1e-3);
        }

        #[test]
        fn anchor_shift_keeps_token(
            layers in proptest::collection::vec(proptest::collection::vec(-4.0f32..4.0, 6), 4),
            vas in proptest::collection::vec(0.0f32..1.0, 4),
            shift in -3.0f32..3.0,
        ) {
            let base = step(layers, vas);
            let cfg = DecodeConfig::default();
            let anchors = select_anchors(&base, &cfg);
            let base_tok = greedy_token(&base, &cfg).unwrap();
            // Shift one anchor layer (never the final one, which also drives the mask).
            let mut targets = vec![anchors.spotlight];
            targets.extend(anchors.shadow);
            for target in targets.into_iter().filter(|&l| l != base.num_layers() - 1) {
                let mut shifted = base.clone();
                for x in &mut shifted.layer_logits[target].0 {
                    *x += shift;
                }
                let c = calibrate_step(&shifted, &cfg).unwrap();
                let b = calibrate_step(&base, &cfg).unwrap();
                // Argmax can only move if two candidates sit within rounding of each other.
                let logits = &b.calibrated.raw_calibrated_logits.0;
                let best = logits[base_tok as usize];
                let runner_up = logits.iter().enumerate()
                    .filter(|&(i, _)| i != base_tok as usize && b.calibrated.mask.allowed[i])
                    .map(|(_, &x)| x)
                    .fold(f32::NEG_INFINITY, f32::max);
                if best - runner_up > 1e-4 {
                    prop_assert_eq!(
                        masked_argmax(&c.calibrated.raw_calibrated_logits.0, &c.calibrated.mask),
                        base_tok
                    );
                }
            }
        }
    }
}
