//! Experiment orchestration: configs, runs, evaluation and comparison tables.

pub mod compare;
pub mod config;
pub mod evaluate;
pub mod experiment;

pub use compare::{collect_summaries, compare, mean_sd, Comparison};
pub use config::{EvalConfig, ExperimentConfig};
pub use evaluate::{evaluate, EpochMetrics, World, CROSS, DIRECTIONS};
pub use experiment::{run_dir, run_experiment, run_seed, LoadedRun, RunSummary};
