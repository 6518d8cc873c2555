//! Ranking metrics, ablation run modes and the planted-rule benchmark.

pub mod benchmark;
pub mod metrics;
pub mod modes;

pub use benchmark::{make_benchmark, Benchmark, BenchmarkSpec, Rule};
pub use metrics::{average_precision, map_score, Grouping, MapReport, RankedResult};
pub use modes::{evaluate_task, run_mode, EncodedTask, Mode};
