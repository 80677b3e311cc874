//! Experiment plumbing: TOML configuration, randomized scenarios, per-run
//! metrics and the paired Monte-Carlo benchmark.

mod config;
mod metrics;
mod montecarlo;
mod scenario;

pub use config::{Config, MonteCarloConfig, ScenarioConfig, VehicleConfig};
pub use metrics::{compute_metrics, input_violations, time_to_target, RunMetrics};
pub use montecarlo::{
    resolve_workers, run_monte_carlo, run_one, write_json, Aggregate, MonteCarloResult, RunResult, Stats, KEEP_IN_SETTLE, WORKERS_ENV,
};
pub use scenario::{channel_rng, sample_scenario, sample_with, Channel, Scenario};
