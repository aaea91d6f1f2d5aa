"""Regenerates the JSON/JSONL fixtures under crates/core/fixtures.

The constructions are described in docs/fixtures.md.
"""
import json
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"


def dump(name, obj):
    (OUT / name).write_text(json.dumps(obj, indent=2) + "\n")


def everywhere(tokens, bias):
    return [{"token": t, "bias": bias} for t in tokens]


def case_study():
    layers = 32
    vas = [round(0.10 + 0.30 * l / 31, 4) for l in range(layers)]
    vas[25] = 0.62
    vas[2] = 0.03
    for l in range(26, layers):
        vas[l] = round(0.45 - 0.02 * (l - 26), 4)
    return {
        "name": "case-study",
        "num_layers": layers,
        "num_heads": 4,
        "vocab_size": 8,
        "seed": 8,
        "vas_curve": vas,
        "logit_noise": 0.0,
        "token_preference_by_layer": everywhere([0, 1, 2, 4, 6, 7], -4.0),
        "drift": {
            "kind": "seeing_then_forgetting",
            "peak_layer": 25,
            "decay": 0.7,
            "grounded_token": 3,
            "hallucinated_token": 5,
            "strength": 3.0,
            "prior": 1.0,
            "final_margin": 0.2007,
        },
    }


def sweep():
    yes, no = 0, 1
    final, spot, shadow = 7, 5, 1
    # (name, final, spotlight, shadow) biases on the correct token.
    kinds = [
        ("control", 0.5, 0.5, 0.0),
        ("needs_alpha_0.6", -0.5, 1.0, 0.0),
        ("needs_alpha_0.8", -0.7, 1.0, 0.0),
        ("breaks_above_alpha_0.8", 0.9, -1.0, 0.0),
        ("needs_beta_0.2", -0.1, 0.0, -1.1),
        ("breaks_above_beta_0.2", 0.3, 0.0, 1.3),
    ]
    cases = []
    trigger = 4
    for _, df, ds, dh in kinds:
        for gold in (yes, no):
            prefs = []
            for layer, bias in ((final, df), (spot, ds), (shadow, dh)):
                if bias != 0.0:
                    prefs.append({"layer": layer, "token": gold, "bias": bias})
            cases.append({"trigger": trigger, "gold": gold, "preferences": prefs})
            trigger += 1
    return {
        "alpha_grid": [0.4, 0.6, 0.8, 1.0, 1.2],
        "beta_grid": [0.0, 0.2, 0.4, 0.6],
        "gamma_grid": [0.1],
        "repetitions": 3,
        "yes_token": yes,
        "no_token": no,
        "profile": {
            "name": "sweep-sensitivity",
            "num_layers": 8,
            "num_heads": 2,
            "vocab_size": 16,
            "seed": 45,
            "vas_curve": [0.3, 0.05, 0.2, 0.35, 0.4, 0.8, 0.5, 0.3],
            "logit_noise": 0.002,
            "token_preference_by_layer": everywhere(range(2, 16), -4.0),
            "cases": cases,
        },
    }


def bench():
    layers = 32
    return {
        "name": "bench",
        "num_layers": layers,
        "num_heads": 8,
        "vocab_size": 4096,
        "seed": 1,
        "vas_curve": [round(0.05 + 0.6 * min(l, 22) / 22 - 0.02 * max(0, l - 22), 4) for l in range(layers)],
        "logit_noise": 1.0,
    }


def tiny():
    return {
        "name": "tiny",
        "num_layers": 4,
        "num_heads": 2,
        "vocab_size": 10,
        "seed": 77,
        "vas_curve": [0.1, 0.3, 0.7, 0.4],
        "logit_noise": 0.5,
        "drift": {
            "kind": "seeing_then_forgetting",
            "peak_layer": 2,
            "decay": 0.5,
            "grounded_token": 3,
            "hallucinated_token": 6,
            "strength": 2.0,
            "prior": 0.5,
            "final_margin": 0.3,
        },
    }


def probe():
    vas = [0.05, 0.08, 0.12, 0.2, 0.3, 0.45, 0.6, 0.7, 0.55, 0.4, 0.3, 0.25]
    return {
        "name": "seeing-then-forgetting",
        "num_layers": 12,
        "num_heads": 4,
        "vocab_size": 24,
        "seed": 21,
        "vas_curve": vas,
        "logit_noise": 1.0,
        "drift": {
            "kind": "seeing_then_forgetting",
            "peak_layer": 7,
            "decay": 0.6,
            "grounded_token": 3,
            "hallucinated_token": 11,
            "strength": 3.0,
            "prior": 1.0,
            "final_margin": 0.6,
        },
    }


def peaked(layers, peak, low):
    curve = [0.2] * layers
    curve[peak] = 0.7
    curve[low] = 0.05
    return curve


def oscillating():
    # Context length parity picks the curve, so anchors alternate per token.
    return {
        "name": "oscillating",
        "num_layers": 32,
        "num_heads": 4,
        "vocab_size": 32,
        "seed": 11,
        "vas_curve": peaked(32, 20, 3),
        "vas_alternates": [peaked(32, 26, 5)],
        "logit_noise": 1.0,
    }


def chair_lines():
    rows = [
        (["dog", "cat", "car"], ["dog", "car"]),
        (["person", "laptop"], ["person", "laptop", "desk"]),
        (["Book", "person"], ["person", "laptop"]),
        ([], ["tree"]),
        (["frisbee", "dog", "grass"], ["dog", "grass"]),
    ]
    return [{"type": "caption", "mentioned": m, "gold": g} for m, g in rows]


def pope_lines():
    rows = [("yes", "yes")] * 3 + [("yes", "no")] + [("no", "yes")] + [("no", "no")] * 5
    return [{"type": "pope", "pred": p, "gold": g} for p, g in rows]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    dump("case_study.json", case_study())
    dump("sweep.json", sweep())
    dump("bench_profile.json", bench())
    dump("tiny_profile.json", tiny())
    dump("probe_profile.json", probe())
    dump("oscillating.json", oscillating())
    (OUT / "chair.jsonl").write_text("".join(json.dumps(r) + "\n" for r in chair_lines()))
    (OUT / "pope.jsonl").write_text("".join(json.dumps(r) + "\n" for r in pope_lines()))


if __name__ == "__main__":
    main()
