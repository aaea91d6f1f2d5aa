//! Per-token latency comparison between decoding strategies.
//!
//! Each strategy runs once for warm-up and then `runs` timed generations of
//! exactly `n_tokens` tokens on a fresh backend. Timed runs are interleaved
//! across strategies so slow drift in machine load hits all of them alike.
//! Ratios are taken against greedy decoding, which is always measured.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::decoder::{generate, StopCriteria, Strategy};
use crate::error::{Error, Result};
use crate::types::{DecodeConfig, TokenId};

pub const MIN_BENCH_TOKENS: usize = 64;
pub const MIN_BENCH_RUNS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    /// Median over timed runs.
    pub ns_per_token: f64,
    pub forward_passes: u64,
    pub forward_pass_ratio: f64,
    pub ratio_vs_greedy: f64,
    /// Per-run wall-clock ratio against the greedy run of the same round.
    pub run_ratios: Vec<f64>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn bench_latency<B, F>(
    mut make_backend: F,
    prompt: &[TokenId],
    n_tokens: usize,
    strategies: &[Strategy],
    cfg: &DecodeConfig,
    runs: usize,
) -> Result<Vec<BenchRow>>
where
    B: Backend,
    F: FnMut() -> Result<B>,
{
    if n_tokens < MIN_BENCH_TOKENS {
        return Err(Error::InvalidConfig(format!(
            "bench needs at least {MIN_BENCH_TOKENS} tokens, got {n_tokens}"
        )));
    }
    if runs < MIN_BENCH_RUNS {
        return Err(Error::InvalidConfig(format!(
            "bench needs at least {MIN_BENCH_RUNS} runs, got {runs}"
        )));
    }
    let mut measured = vec![Strategy::Greedy];
    measured.extend(
        strategies
            .iter()
            .copied()
            .filter(|&s| s != Strategy::Greedy),
    );
    let stop = StopCriteria::max_tokens(n_tokens);

    let mut run_once = |strategy: Strategy| -> Result<(f64, u64)> {
        let mut backend = make_backend()?;
        let out = generate(&mut backend, prompt, cfg, stop, strategy)?;
        if out.tokens.len() != n_tokens {
            return Err(Error::BackendFailure(format!(
                "{strategy} produced {} of {n_tokens} tokens",
                out.tokens.len()
            )));
        }
        Ok((out.elapsed_ns as f64 / n_tokens as f64, out.forward_passes))
    };

    for &s in &measured {
        run_once(s)?;
    }
    let mut ns = vec![Vec::with_capacity(runs); measured.len()];
    let mut passes = vec![0u64; measured.len()];
    for _ in 0..runs {
        for (i, &s) in measured.iter().enumerate() {
            let (t, p) = run_once(s)?;
            ns[i].push(t);
            passes[i] = p;
        }
    }

    let greedy_median = median(&ns[0]);
    let rows = measured
        .iter()
        .enumerate()
        .filter(|(_, s)| strategies.contains(s))
        .map(|(i, &strategy)| BenchRow {
            strategy,
            ns_per_token: median(&ns[i]),
            forward_passes: passes[i],
            forward_pass_ratio: passes[i] as f64 / passes[0] as f64,
            ratio_vs_greedy: median(&ns[i]) / greedy_median,
            run_ratios: ns[i].iter().zip(&ns[0]).map(|(t, g)| t / g).collect(),
        })
        .collect();
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "strategy,ns_per_token,forward_passes,forward_pass_ratio,ratio_vs_greedy"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{:.1},{},{},{:.4}",
            r.strategy, r.ns_per_token, r.forward_passes, r.forward_pass_ratio, r.ratio_vs_greedy
        )?;
    }
    Ok(())
}
