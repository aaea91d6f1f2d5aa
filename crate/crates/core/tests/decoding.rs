mod common;

use daid_core::decoder::{anchor_trace, generate, StopCriteria, Strategy};
use daid_core::evalkit::{layer_probe, probe_prompts};
use daid_core::{DecodeConfig, Error, Sampling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{load_spec, random_toy_spec};

#[test]
fn identical_inputs_give_identical_results_across_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..100u64 {
        let spec = random_toy_spec(&mut rng, seed);
        let prompt = spec
            .profile
            .prompt(&[rng.random_range(0..spec.vocab_size as u32)]);
        let sampled = DecodeConfig {
            sampling: Sampling::Temperature { tau: 0.7, seed },
            ..DecodeConfig::default()
        };
        for cfg in [DecodeConfig::default(), sampled] {
            for strategy in Strategy::ALL {
                let run = || {
                    generate(
                        &mut spec.build().unwrap(),
                        &prompt,
                        &cfg,
                        StopCriteria::max_tokens(12),
                        strategy,
                    )
                    .unwrap()
                };
                let (a, b) = (run(), run());
                assert_eq!(a.tokens, b.tokens, "seed {seed} {strategy}");
                assert_eq!(a.per_step, b.per_step, "seed {seed} {strategy}");
                assert_eq!(a.forward_passes, b.forward_passes);
            }
        }
    }
}

#[test]
fn reduction_holds_on_every_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..100u64 {
        let spec = random_toy_spec(&mut rng, seed);
        let prompt = spec.profile.prompt(&[1, 2, 3]);
        let stop = StopCriteria::max_tokens(16);
        let reduced = DecodeConfig::reduced();
        let g = generate(
            &mut spec.build().unwrap(),
            &prompt,
            &reduced,
            stop,
            Strategy::Greedy,
        )
        .unwrap();
        let d = generate(
            &mut spec.build().unwrap(),
            &prompt,
            &reduced,
            stop,
            Strategy::Daid,
        )
        .unwrap();
        assert_eq!(g.tokens, d.tokens, "seed {seed}");
    }
}

#[test]
fn vcdsim_doubles_passes_on_every_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20u64 {
        let spec = random_toy_spec(&mut rng, seed);
        let prompt = spec.profile.prompt(&[0]);
        let n = rng.random_range(1..30);
        let stop = StopCriteria::max_tokens(n);
        let cfg = DecodeConfig::default();
        let g = generate(
            &mut spec.build().unwrap(),
            &prompt,
            &cfg,
            stop,
            Strategy::Greedy,
        )
        .unwrap();
        let v = generate(
            &mut spec.build().unwrap(),
            &prompt,
            &cfg,
            stop,
            Strategy::VcdSim,
        )
        .unwrap();
        let d = generate(
            &mut spec.build().unwrap(),
            &prompt,
            &cfg,
            stop,
            Strategy::Daid,
        )
        .unwrap();
        assert_eq!(g.tokens, v.tokens);
        assert_eq!(g.forward_passes, n as u64);
        assert_eq!(d.forward_passes, n as u64);
        assert_eq!(v.forward_passes, 2 * g.forward_passes);
        assert_eq!(v.per_step.len(), v.tokens.len());
    }
}

#[test]
fn oscillating_profile_alternates_anchors() {
    let spec = load_spec("oscillating.json");
    let prompt = spec.profile.prompt(&[1, 2]);
    let out = generate(
        &mut spec.build().unwrap(),
        &prompt,
        &DecodeConfig::default(),
        StopCriteria::max_tokens(24),
        Strategy::Daid,
    )
    .unwrap();
    let trace = anchor_trace(&out).unwrap();
    assert_eq!(trace.len(), 24);
    for (i, point) in trace.iter().enumerate() {
        let context_len = prompt.len() + i;
        let (spot, shadow) = if context_len.is_multiple_of(2) {
            (20, 3)
        } else {
            (26, 5)
        };
        assert_eq!(point.spotlight, spot, "step {i}");
        assert_eq!(point.shadow, Some(shadow), "step {i}");
    }
}

#[test]
fn stable_profile_keeps_its_spotlight() {
    let spec = load_spec("case_study.json");
    let out = generate(
        &mut spec.build().unwrap(),
        &spec.profile.prompt(&[1]),
        &DecodeConfig::default(),
        StopCriteria::max_tokens(16),
        Strategy::Daid,
    )
    .unwrap();
    let trace = anchor_trace(&out).unwrap();
    assert!(trace
        .iter()
        .all(|p| p.spotlight == 25 && p.shadow == Some(2)));
}

#[test]
fn constrained_shadows_stay_below_spotlight() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for seed in 0..50u64 {
        let spec = random_toy_spec(&mut rng, seed);
        let out = generate(
            &mut spec.build().unwrap(),
            &spec.profile.prompt(&[0]),
            &DecodeConfig::default(),
            StopCriteria::max_tokens(10),
            Strategy::Daid,
        )
        .unwrap();
        for p in anchor_trace(&out).unwrap() {
            if let Some(s) = p.shadow {
                assert!(s < p.spotlight);
            }
        }
    }
}

#[test]
fn anchor_trace_rejects_other_strategies() {
    let spec = load_spec("tiny_profile.json");
    for strategy in [Strategy::Greedy, Strategy::DolaLike, Strategy::VcdSim] {
        let out = generate(
            &mut spec.build().unwrap(),
            &spec.profile.prompt(&[0]),
            &DecodeConfig::default(),
            StopCriteria::max_tokens(2),
            strategy,
        )
        .unwrap();
        assert!(matches!(anchor_trace(&out), Err(Error::WrongStrategy(_))));
    }
}

#[test]
fn final_layer_probe_equals_greedy_path() {
    let spec = load_spec("probe_profile.json");
    let prompts = probe_prompts(&spec.profile, spec.vocab_size, 40, 3);
    let gold = vec![spec.profile.gold_token().unwrap(); prompts.len()];
    let report = layer_probe(&mut spec.build().unwrap(), &prompts, &gold).unwrap();
    let last = spec.num_layers - 1;
    for (i, prompt) in prompts.iter().enumerate() {
        let g = generate(
            &mut spec.build().unwrap(),
            prompt,
            &DecodeConfig::default(),
            StopCriteria::max_tokens(1),
            Strategy::Greedy,
        )
        .unwrap();
        assert_eq!(report.tokens_at(last)[i], g.tokens[0]);
    }
}

#[test]
fn probe_curve_rises_then_declines() {
    let spec = load_spec("probe_profile.json");
    let prompts = probe_prompts(&spec.profile, spec.vocab_size, 300, 3);
    let gold = vec![spec.profile.gold_token().unwrap(); prompts.len()];
    let curve = layer_probe(&mut spec.build().unwrap(), &prompts, &gold)
        .unwrap()
        .agreement_curve();
    let peak = (0..curve.len()).fold(0, |b, i| if curve[i] > curve[b] { i } else { b });
    assert_eq!(peak, 7, "{curve:?}");
    assert!(curve[0] < curve[7] && *curve.last().unwrap() < curve[7]);
}

#[test]
fn stop_token_ends_generation() {
    let spec = load_spec("case_study.json");
    let out = generate(
        &mut spec.build().unwrap(),
        &spec.profile.prompt(&[1]),
        &DecodeConfig::default(),
        StopCriteria {
            max_new_tokens: 10,
            stop_token: Some(3),
        },
        Strategy::Daid,
    )
    .unwrap();
    assert_eq!(out.tokens, [3]);
}
