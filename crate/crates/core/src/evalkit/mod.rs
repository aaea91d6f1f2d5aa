//! Metrics, layer probes, sensitivity sweeps and latency benchmarks.

pub mod bench;
pub mod dataset;
pub mod metrics;
pub mod probe;
pub mod sweep;

pub use bench::{bench_latency, write_bench_csv, BenchRow};
pub use dataset::{load_dataset, parse_dataset, Dataset, DatasetRecord};
pub use metrics::{
    chair_i, chair_s, pope_scores, pope_scores_with, Answer, BinaryQaRecord, CaptionEval,
    PopeScores,
};
pub use probe::{layer_probe, probe_prompts, ProbeReport, ProbeRow};
pub use sweep::{run_sweep, write_sweep_csv, SweepItem, SweepRow, SweepSpec};
