//! Experiment harness: sweep configs, seeded deterministic execution,
//! aggregation statistics, and plot-ready exports.

pub mod config;
pub mod plotdata;
pub mod stats;
pub mod sweep;

pub use config::{AggregateSettings, SweepConfig};
pub use plotdata::{emit_plot_data, SeriesSpec};
pub use stats::{bootstrap_ci, iqm, mean, mean_and_se, steps_to_band, Statistic, StatsError};
pub use sweep::{aggregate_dir, run_sweep, AggregateReport, RunFailure, SweepOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("missing cell '{0}'")]
    MissingCell(String),
}
