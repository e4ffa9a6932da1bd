//! Evaluation: dataset ingestion, metrics and the synthetic experiments.

pub mod benchmark;
pub mod ingest;
pub mod metrics;

pub use benchmark::{
    convergence_experiment, run_benchmark, sweep, BenchmarkConfig, BenchmarkReport, ConvergenceReport, Metrics,
    ScoredItem, SweepParameter, SweepRow,
};
pub use ingest::{ingest, Format, QaItem};
pub use metrics::{auc_pr, auroc, f1_accuracy};
