//! Metrics, sensitivity sweeps, distribution summaries and timing.

pub mod bench;
pub mod metrics;
pub mod stats;
pub mod sweep;

pub use bench::{timing_bench, BenchReport, TimingRecord};
pub use metrics::{balanced_accuracy, error_map, ConfusionMatrix};
pub use stats::{summarize_distribution, BoxplotStats};
pub use sweep::{epsilon_sweep, sweep_series, SweepResult, SweepRow};
