//! `daid`: decode, probe, sweep, bench, eval and trace tools.
//!
//! Exit status is 0 on success, 1 on runtime errors and 2 on usage errors.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use daid_core::backend::{Backend, ToyModelSpec};
use daid_core::decoder::{anchor_trace, generate, GenerationResult, StopCriteria, Strategy};
use daid_core::evalkit::{
    bench_latency, chair_i, chair_s, layer_probe, load_dataset, pope_scores, probe_prompts,
    run_sweep, write_bench_csv, write_sweep_csv, SweepSpec,
};
use daid_core::traceio::{read_trace, record_trace, trace_backend, write_trace};
use daid_core::{DecodeConfig, Sampling, TokenId};
use serde_json::json;

use config::{DecodeOverrides, FileConfig};

const DIAG_SCHEMA: &str = "daid-diag/1";

#[derive(Parser)]
#[command(
    name = "daid",
    version,
    about = "Dual-anchor introspective decoding tools"
)]
struct Cli {
    /// Flat TOML file of defaults (alpha, beta, gamma, preset,
    /// no_shadow_constraint, strategy, max_new_tokens, threads). Flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for sweeps and batch work [default: available cores].
    #[arg(long, global = true, env = "DAID_THREADS", value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate tokens and write per-step diagnostics as JSON.
    Decode(DecodeArgs),
    /// Per-layer greedy agreement with a toy profile's planted gold token.
    Probe(ProbeArgs),
    /// Grid sweep over alpha, beta and gamma.
    Sweep(SweepArgs),
    /// Per-token latency of every strategy against greedy decoding.
    Bench(BenchArgs),
    /// CHAIR or POPE scores for a JSONL dataset.
    Eval(EvalArgs),
    /// Inspect, validate or record binary trace files.
    #[command(subcommand)]
    Trace(TraceCommand),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Replay a recorded trace file.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Drive the synthetic toy model described by a JSON profile.
    #[arg(long = "toy-profile", value_name = "PATH")]
    toy_profile: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Daid,
    Dola,
    Vcdsim,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Daid => Strategy::Daid,
            StrategyArg::Dola => Strategy::DolaLike,
            StrategyArg::Vcdsim => Strategy::VcdSim,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// alpha 0.8, beta 0.2, gamma 0.1 (open-ended generation).
    Default,
    /// Same, with gamma 0.9 for yes/no question answering.
    Pope,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Pope => "pope",
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    source: Source,
    /// Spotlight weight [default: 0.8].
    #[arg(long)]
    alpha: Option<f32>,
    /// Shadow suppression weight [default: 0.2].
    #[arg(long)]
    beta: Option<f32>,
    /// Plausibility threshold relative to the top final-layer probability [default: 0.1].
    #[arg(long)]
    gamma: Option<f32>,
    /// Named parameter set; explicit flags override it.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Let the shadow layer come from anywhere in the stack.
    #[arg(long)]
    no_shadow_constraint: bool,
    /// Decoding strategy [default: daid].
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Tokens to generate [default: 16, or the trace's step count].
    #[arg(long, value_name = "N")]
    max_new_tokens: Option<usize>,
    /// Stop after emitting this token.
    #[arg(long, value_name = "ID")]
    stop_token: Option<TokenId>,
    /// Comma-separated text token ids, placed after the toy model's visual block.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "trace",
        default_value = "1"
    )]
    prompt: Vec<TokenId>,
    /// Sample from the calibrated distribution at this temperature (daid only).
    #[arg(long, value_name = "TAU")]
    temperature: Option<f32>,
    /// Sampling seed.
    #[arg(long, default_value_t = 0, requires = "temperature")]
    seed: u64,
    /// Write diagnostics here instead of stdout.
    #[arg(long, value_name = "PATH")]
    json_out: Option<PathBuf>,
    /// Also write the per-step spotlight/shadow series as CSV (daid only).
    #[arg(long, value_name = "PATH")]
    anchor_trace: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long = "toy-profile", value_name = "PATH")]
    toy_profile: PathBuf,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Number of random probe prompts.
    #[arg(long, default_value_t = 200)]
    prompts: usize,
    /// Text tokens per prompt after the visual block.
    #[arg(long, default_value_t = 3)]
    text_len: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep specification (JSON).
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long = "toy-profile", value_name = "PATH")]
    toy_profile: PathBuf,
    /// Tokens per timed generation (at least 64).
    #[arg(long, default_value_t = 256)]
    tokens: usize,
    /// Timed runs per strategy (at least 5).
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Chair,
    Pope,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL records of type "caption" or "pope".
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Print the header.
    Inspect { path: PathBuf },
    /// Read every record; exit 0 if the file is well formed.
    Validate { path: PathBuf },
    /// Record a greedy toy-model run as a trace.
    Record {
        #[arg(long = "toy-profile", value_name = "PATH")]
        toy_profile: PathBuf,
        #[arg(long, default_value_t = 8)]
        steps: u32,
        /// Comma-separated text token ids after the visual block.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        prompt: Vec<TokenId>,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

fn load_toy(path: &Path) -> Result<ToyModelSpec> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: ToyModelSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    spec.profile.validate(&spec.dims())?;
    Ok(spec)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// JSON numbers for f32 values, printed at f32 precision.
fn short(x: f32) -> f64 {
    x.to_string().parse().expect("f32 display round-trips")
}

/// Prints to stdout; a closed pipe on the reader side is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn diagnostics_json(
    result: &GenerationResult,
    backend_name: &str,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> serde_json::Value {
    let steps: Vec<_> = result
        .per_step
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut step = json!({
                "step": i,
                "token": d.chosen_token,
                "mask_count": d.mask_count,
                "p_final": short(d.p_final_of_chosen),
                "p_daid": short(d.p_daid_of_chosen),
            });
            if let Some(a) = &d.anchors {
                step["spotlight"] = json!(a.spotlight);
                step["shadow"] = json!(a.shadow);
                step["fallback_used"] = json!(a.fallback_used);
                step["vas"] = json!(a
                    .vas_profile
                    .scores()
                    .iter()
                    .copied()
                    .map(short)
                    .collect::<Vec<_>>());
            }
            step
        })
        .collect();
    json!({
        "schema": DIAG_SCHEMA,
        "backend": backend_name,
        "strategy": result.strategy,
        "config": {
            "alpha": short(cfg.alpha),
            "beta": short(cfg.beta),
            "gamma": short(cfg.gamma),
            "enforce_shadow_before_spotlight": cfg.enforce_shadow_before_spotlight,
            "sampling": match cfg.sampling {
                Sampling::Greedy => json!({"kind": "greedy"}),
                Sampling::Temperature { tau, seed } => json!({"kind": "temperature", "tau": short(tau), "seed": seed}),
            },
        },
        "prompt": prompt,
        "tokens": result.tokens,
        "forward_passes": result.forward_passes,
        "steps": steps,
    })
}

fn run_decode(args: DecodeArgs, file: &FileConfig) -> Result<()> {
    let overrides = DecodeOverrides {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        preset: args.preset.map(|p| p.name().to_string()),
        no_shadow_constraint: args.no_shadow_constraint,
    };
    let mut cfg = config::resolve(file, &overrides)?;
    if let Some(tau) = args.temperature {
        cfg.sampling = Sampling::Temperature {
            tau,
            seed: args.seed,
        };
        cfg.validate()?;
    }
    let strategy: Strategy = match (args.strategy, &file.strategy) {
        (Some(s), _) => s.into(),
        (None, Some(s)) => s.parse().map_err(anyhow::Error::msg)?,
        (None, None) => Strategy::Daid,
    };
    if args.temperature.is_some() && strategy != Strategy::Daid {
        bail!("--temperature only applies to the daid strategy");
    }
    let max_new = args.max_new_tokens.or(file.max_new_tokens);

    let (mut backend, prompt, default_len): (Box<dyn Backend>, Vec<TokenId>, usize) =
        match (&args.source.trace, &args.source.toy_profile) {
            (Some(path), _) => {
                let backend =
                    trace_backend(path).with_context(|| format!("opening {}", path.display()))?;
                let header = backend.header().clone();
                (
                    Box::new(backend),
                    vec![0; header.prompt_len as usize],
                    header.step_count as usize,
                )
            }
            (None, Some(path)) => {
                let spec = load_toy(path)?;
                let prompt = spec.profile.prompt(&args.prompt);
                (Box::new(spec.build()?), prompt, 16)
            }
            (None, None) => unreachable!("clap requires a backend source"),
        };
    let stop = StopCriteria {
        max_new_tokens: max_new.unwrap_or(default_len),
        stop_token: args.stop_token,
    };
    let name = backend.descriptor().name.clone();
    let result = generate(backend.as_mut(), &prompt, &cfg, stop, strategy)?;

    if let Some(path) = &args.anchor_trace {
        let points = anchor_trace(&result)?;
        let mut w = create(path)?;
        writeln!(w, "step,spotlight,shadow")?;
        for (i, p) in points.iter().enumerate() {
            let shadow = p.shadow.map(|s| s.to_string()).unwrap_or_default();
            writeln!(w, "{i},{},{shadow}", p.spotlight)?;
        }
        w.flush()?;
    }
    let diag = diagnostics_json(&result, &name, &prompt, &cfg);
    match &args.json_out {
        Some(path) => {
            write_json(path, &diag)?;
            let tokens: Vec<String> = result.tokens.iter().map(u32::to_string).collect();
            emit(&tokens.join(" "))?;
        }
        None => emit(&serde_json::to_string_pretty(&diag)?)?,
    }
    Ok(())
}

fn run_probe(args: ProbeArgs) -> Result<()> {
    let spec = load_toy(&args.toy_profile)?;
    let gold = spec
        .profile
        .gold_token()
        .context("profile plants no gold token; add a seeing_then_forgetting drift")?;
    let prompts = probe_prompts(&spec.profile, spec.vocab_size, args.prompts, args.text_len);
    let report = layer_probe(&mut spec.build()?, &prompts, &vec![gold; prompts.len()])?;
    let mut w = create(&args.out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run_sweep_cmd(args: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let spec: SweepSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.spec.display()))?;
    let rows = run_sweep(&spec, &spec.dataset())?;
    let mut w = create(&args.out)?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run_bench(args: BenchArgs, file: &FileConfig) -> Result<()> {
    let spec = load_toy(&args.toy_profile)?;
    let cfg = config::resolve(file, &DecodeOverrides::default())?;
    let prompt = spec.profile.prompt(&[1]);
    let rows = bench_latency(
        || spec.build(),
        &prompt,
        args.tokens,
        &Strategy::ALL,
        &cfg,
        args.runs,
    )?;
    let mut w = create(&args.out)?;
    write_bench_csv(&rows, &mut w)?;
    w.flush()?;
    for r in &rows {
        println!(
            "{:<8} {:>12.0} ns/token  passes x{:<4} wall x{:.3}",
            r.strategy, r.ns_per_token, r.forward_pass_ratio, r.ratio_vs_greedy
        );
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let value = match args.metric {
        Metric::Chair => json!({
            "metric": "chair",
            "captions": data.captions.len(),
            "chair_i": chair_i(&data.captions),
            "chair_s": chair_s(&data.captions)?,
        }),
        Metric::Pope => {
            let s = pope_scores(&data.pope)?;
            json!({
                "metric": "pope",
                "records": data.pope.len(),
                "positive_class": "yes",
                "accuracy": s.accuracy,
                "f1": s.f1,
                "precision": s.precision,
                "recall": s.recall,
                "true_positives": s.true_positives,
                "false_positives": s.false_positives,
                "false_negatives": s.false_negatives,
                "true_negatives": s.true_negatives,
            })
        }
    };
    write_json(&args.out, &value)
}

fn run_trace(cmd: TraceCommand) -> Result<()> {
    match cmd {
        TraceCommand::Inspect { path } => {
            let (h, _) = read_trace(&path)?;
            let span: Vec<String> = h.visual_span.indices().iter().map(u32::to_string).collect();
            println!("version: {}", daid_core::traceio::VERSION);
            println!("layers: {}", h.dims.num_layers);
            println!("heads: {}", h.dims.num_heads);
            println!("vocab: {}", h.dims.vocab_size);
            println!("logit_mode: {}", h.logit_mode.as_str());
            println!("prompt_len: {}", h.prompt_len);
            println!("visual_span: [{}]", span.join(", "));
            println!("steps: {}", h.step_count);
            println!("header_bytes: {}", h.byte_len());
            println!("record_bytes: {}", h.record_byte_len());
        }
        TraceCommand::Validate { path } => {
            let (h, reader) = read_trace(&path)?;
            let mut n = 0u32;
            for record in reader {
                record?;
                n += 1;
            }
            if n != h.step_count {
                bail!("header declares {} steps, file holds {n}", h.step_count);
            }
            println!("ok: {n} steps");
        }
        TraceCommand::Record {
            toy_profile,
            steps,
            prompt,
            out,
        } => {
            let spec = load_toy(&toy_profile)?;
            let prompt = spec.profile.prompt(&prompt);
            let (header, records) = record_trace(&mut spec.build()?, &prompt, steps)?;
            write_trace(&out, &header, &records)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        daid_core::par::init_threads(n);
    }
    match cli.command {
        Command::Decode(a) => run_decode(a, &file),
        Command::Probe(a) => run_probe(a),
        Command::Sweep(a) => run_sweep_cmd(a),
        Command::Bench(a) => run_bench(a, &file),
        Command::Eval(a) => run_eval(a),
        Command::Trace(c) => run_trace(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
