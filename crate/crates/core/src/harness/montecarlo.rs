use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::metrics::{compute_metrics, RunMetrics};
use super::scenario::{sample_scenario, Scenario};
use crate::cascade::{run_simulation, ControllerKind, SimLog};
use crate::error::{Error, Result};

/// Environment variable read when the configured worker count is 0.
pub const WORKERS_ENV: &str = "CMPC_WORKERS";

/// Settling time excluded from the keep-in tilt statistic (s).
pub const KEEP_IN_SETTLE: f64 = 2.0;

/// One controller on one scenario.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub run: usize,
    pub controller: ControllerKind,
    pub scenario: Scenario,
    /// `Err` holds the fault that ended the run.
    pub metrics: std::result::Result<RunMetrics, String>,
    pub log: Option<SimLog>,
}

#[derive(Clone, Debug)]
pub struct MonteCarloResult {
    pub runs: usize,
    pub seed: u64,
    /// Ordered by run, then controller.
    pub results: Vec<RunResult>,
}

/// Worker count: explicit value, then [`WORKERS_ENV`], then the core count.
pub fn resolve_workers(configured: usize) -> usize {
    if configured > 0 {
        return configured;
    }
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs one scenario under one controller and scores it.
pub fn run_one(cfg: &Config, scenario: &Scenario, kind: ControllerKind) -> (std::result::Result<RunMetrics, String>, Option<SimLog>) {
    let sim = &cfg.simulation;
    match run_simulation(&scenario.setup(), kind, &cfg.controller(), sim) {
        Ok(log) => {
            if let Some(why) = &log.aborted {
                return (Err(why.clone()), Some(log));
            }
            let m = compute_metrics(&log, &cfg.constraints, sim.arrival_radius, sim.arrival_dwell, KEEP_IN_SETTLE)
                .map_err(|e| e.to_string());
            (m, Some(log))
        }
        Err(e) => (Err(e.to_string()), None),
    }
}

/// Paired benchmark: every controller flies the same scenario for each run.
/// Jobs run on a private thread pool; results do not depend on the worker count.
pub fn run_monte_carlo(cfg: &Config, keep_logs: bool) -> Result<MonteCarloResult> {
    cfg.validate()?;
    let mc = &cfg.monte_carlo;
    let scenarios: Vec<Scenario> = (0..mc.runs).map(|k| sample_scenario(mc.seed.wrapping_add(k as u64), cfg)).collect();
    let jobs: Vec<(usize, ControllerKind)> = (0..mc.runs).flat_map(|k| mc.controllers.iter().map(move |c| (k, *c))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(mc.workers))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results = pool.install(|| {
        jobs.par_iter()
            .map(|&(run, controller)| {
                let scenario = &scenarios[run];
                let (metrics, log) = run_one(cfg, scenario, controller);
                RunResult { run, controller, scenario: scenario.clone(), metrics, log: log.filter(|_| keep_logs) }
            })
            .collect::<Vec<_>>()
    });
    Ok(MonteCarloResult { runs: mc.runs, seed: mc.seed, results })
}

/// Median, mean, sample standard deviation and the values in run order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Stats {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { median: f64::NAN, mean: f64::NAN, std: f64::NAN, values };
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 { (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { median, mean, std, values }
    }
}

/// Metric name and accessor. Time to target only counts runs that arrived.
type Metric = (&'static str, fn(&RunMetrics) -> Option<f64>);

const DETERMINISTIC_METRICS: [Metric; 9] = [
    ("attitude_rmse", |m| Some(m.attitude_rmse)),
    ("velocity_rmse", |m| Some(m.velocity_rmse)),
    ("position_rmse", |m| Some(m.position_rmse)),
    ("thrust_rmse", |m| Some(m.thrust_rmse)),
    ("torque_rmse", |m| Some(m.torque_rmse)),
    ("time_to_target", |m| m.time_to_target),
    ("reached", |m| Some(if m.reached { 1.0 } else { 0.0 })),
    ("final_distance", |m| Some(m.final_distance)),
    ("max_l1_slack", |m| Some(m.max_l1_slack)),
];

const TIMING_METRICS: [Metric; 2] = [("solve_time", |m| Some(m.solve_time)), ("assembly_time", |m| Some(m.assembly_time))];

/// controller -> metric -> statistics.
pub type Aggregate = BTreeMap<String, BTreeMap<String, Stats>>;

impl MonteCarloResult {
    pub fn ok(&self, kind: ControllerKind) -> impl Iterator<Item = (&RunResult, &RunMetrics)> {
        self.results.iter().filter(move |r| r.controller == kind).filter_map(|r| r.metrics.as_ref().ok().map(|m| (r, m)))
    }

    pub fn faults(&self, kind: ControllerKind) -> usize {
        self.results.iter().filter(|r| r.controller == kind && r.metrics.is_err()).count()
    }

    fn controllers(&self) -> Vec<ControllerKind> {
        let mut v: Vec<_> = self.results.iter().map(|r| r.controller).collect();
        v.sort();
        v.dedup();
        v
    }

    fn aggregate_of(&self, metrics: &[Metric]) -> Aggregate {
        self.controllers()
            .into_iter()
            .map(|kind| {
                let table = metrics
                    .iter()
                    .map(|(name, get)| (name.to_string(), Stats::of(self.ok(kind).filter_map(|(_, m)| get(m)).collect())))
                    .collect();
                (kind.name().to_string(), table)
            })
            .collect()
    }

    /// Statistics of everything that does not depend on wall-clock time.
    /// Faulted runs are left out of every row.
    pub fn aggregate(&self) -> Aggregate {
        self.aggregate_of(&DETERMINISTIC_METRICS)
    }

    pub fn timing(&self) -> Aggregate {
        self.aggregate_of(&TIMING_METRICS)
    }

    /// Run counts and faults per controller.
    pub fn summary(&self) -> serde_json::Value {
        let per: BTreeMap<String, serde_json::Value> = self
            .controllers()
            .into_iter()
            .map(|k| {
                let faults: Vec<serde_json::Value> = self
                    .results
                    .iter()
                    .filter(|r| r.controller == k)
                    .filter_map(|r| r.metrics.as_ref().err().map(|e| serde_json::json!({ "run": r.run, "error": e })))
                    .collect();
                let v = serde_json::json!({
                    "completed": self.ok(k).count(),
                    "reached": self.ok(k).filter(|(_, m)| m.reached).count(),
                    "faults": faults,
                });
                (k.name().to_string(), v)
            })
            .collect();
        serde_json::json!({ "runs": self.runs, "seed": self.seed, "controllers": per })
    }

    /// One row per run, controller and metric, timing included.
    pub fn write_long_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "run,seed,controller,metric,value")?;
        for r in &self.results {
            let Ok(m) = &r.metrics else { continue };
            for (name, get) in DETERMINISTIC_METRICS.iter().chain(TIMING_METRICS.iter()) {
                if let Some(v) = get(m) {
                    writeln!(w, "{},{},{},{},{}", r.run, r.scenario.seed, r.controller.name(), name, v)?;
                }
            }
        }
        Ok(())
    }

    /// Writes `aggregate.json`, `timing.json`, `summary.json`, `metrics_long.csv`
    /// and, when logs were kept, `runs/run_NNN_<controller>{,_timing}.csv`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("aggregate.json"), &self.aggregate())?;
        write_json(&dir.join("timing.json"), &self.timing())?;
        write_json(&dir.join("summary.json"), &self.summary())?;
        self.write_long_csv(BufWriter::new(File::create(dir.join("metrics_long.csv"))?))?;
        let runs = dir.join("runs");
        for r in &self.results {
            let Some(log) = &r.log else { continue };
            std::fs::create_dir_all(&runs)?;
            let stem = format!("run_{:03}_{}", r.run, r.controller.name());
            log.write_csv(BufWriter::new(File::create(runs.join(format!("{stem}.csv")))?))?;
            log.write_timing_csv(BufWriter::new(File::create(runs.join(format!("{stem}_timing.csv")))?))?;
        }
        Ok(())
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Config {
        let mut cfg = Config::default();
        cfg.simulation.duration = 0.2;
        cfg.monte_carlo.runs = 2;
        cfg.monte_carlo.workers = 1;
        cfg
    }

    #[test]
    fn stats_of_small_samples() {
        let s = Stats::of(vec![3.0, 1.0, 2.0, 10.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert!((s.std - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.values, vec![3.0, 1.0, 2.0, 10.0]);
        assert_eq!(Stats::of(vec![7.0]).std, 0.0);
    }

    #[test]
    fn paired_runs_share_one_scenario() {
        let cfg = tiny();
        let out = run_monte_carlo(&cfg, false).unwrap();
        assert_eq!(out.results.len(), 4);
        for pair in out.results.chunks(2) {
            assert_eq!(pair[0].run, pair[1].run);
            assert_eq!(pair[0].scenario, pair[1].scenario);
            assert_ne!(pair[0].controller, pair[1].controller);
        }
        let agg = out.aggregate();
        for kind in ["cmpc", "smpc"] {
            assert_eq!(agg[kind]["position_rmse"].values.len(), 2 - out.faults(kind.parse().unwrap()));
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = tiny();
        let mut two = cfg.clone();
        two.monte_carlo.workers = 2;
        let a = serde_json::to_string(&run_monte_carlo(&cfg, false).unwrap().aggregate()).unwrap();
        let b = serde_json::to_string(&run_monte_carlo(&two, false).unwrap().aggregate()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn explicit_workers_win() {
        assert_eq!(resolve_workers(3), 3);
        assert!(resolve_workers(0) >= 1);
    }
}
