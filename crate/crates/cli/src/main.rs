//! Command-line front end: single runs, the Monte-Carlo benchmark, the
//! verification suites and reference planning.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tandem_cmpc::cascade::ControllerKind;
use tandem_cmpc::harness::{run_monte_carlo, run_one, sample_scenario, write_json, Config};
use tandem_cmpc::reference::plan_trajectory;
use tandem_cmpc::verify;

#[derive(Parser)]
#[command(name = "cmpc", version, about = "Cascaded MPC for a tandem-rotor helicopter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly one randomized scenario and write its log.
    Run {
        #[arg(long, default_value = "cmpc")]
        controller: ControllerKind,
        /// Scenario seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Paired Monte-Carlo benchmark.
    Mc {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated, e.g. `cmpc,smpc`.
        #[arg(long, value_delimiter = ',')]
        controllers: Option<Vec<ControllerKind>>,
        /// 0 uses CMPC_WORKERS or every core.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/mc")]
        out: PathBuf,
        /// Also write per-run logs.
        #[arg(long)]
        keep_logs: bool,
    },
    /// Run the property suites against their independent oracles.
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Plan the reference for a scenario's initial state and write it as CSV.
    Plan {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration as TOML.
    Config,
}

/// Errors in user input exit with 2, like argument errors.
struct BadInput(anyhow::Error);

fn load_config(path: Option<&Path>) -> std::result::Result<Config, BadInput> {
    match path {
        Some(p) => Config::from_file(p).with_context(|| format!("reading {}", p.display())).map_err(BadInput),
        None => Ok(Config::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run(cfg: &Config, kind: ControllerKind, seed: u64, out: &Path) -> Result<ExitCode> {
    let scenario = sample_scenario(seed, cfg);
    let (metrics, log) = run_one(cfg, &scenario, kind);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("scenario.json"), &scenario)?;
    if let Some(log) = &log {
        log.write_csv(create(&out.join("log.csv"))?)?;
        log.write_timing_csv(create(&out.join("timing.csv"))?)?;
    }
    match metrics {
        Ok(m) => {
            write_json(&out.join("metrics.json"), &m)?;
            println!(
                "{} seed {seed}: position rmse {:.3} m, final distance {:.3} m, reached {}",
                kind.name(),
                m.position_rmse,
                m.final_distance,
                m.reached
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(why) => {
            eprintln!("{} seed {seed}: run fault: {why}", kind.name());
            Ok(ExitCode::from(1))
        }
    }
}

fn monte_carlo(cfg: &Config, out: &Path, keep_logs: bool) -> Result<ExitCode> {
    let result = run_monte_carlo(cfg, keep_logs)?;
    result.write_outputs(out)?;
    let agg = result.aggregate();
    let mut faults = 0;
    for kind in &cfg.monte_carlo.controllers {
        let table = &agg[kind.name()];
        let n = result.faults(*kind);
        faults += n;
        println!(
            "{}: reached {}/{}, median position rmse {:.3} m, faults {n}",
            kind.name(),
            table["reached"].values.iter().filter(|x| **x > 0.5).count(),
            cfg.monte_carlo.runs,
            table["position_rmse"].median,
        );
    }
    println!("wrote {}", out.display());
    Ok(if faults > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn plan(cfg: &Config, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let setup = sample_scenario(seed, cfg).setup();
    let planner = &cfg.guidance.planner;
    let duration = planner.duration_for(&setup.x0, &setup.target);
    let traj = plan_trajectory(&setup.x0, &setup.target, duration, cfg.outer.dt, 0.0, &setup.model)?;
    match out {
        Some(p) => traj.write_csv(create(p)?)?,
        None => traj.write_csv(std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_all(seed: u64) -> ExitCode {
    let reports = verify::run_all(seed);
    for r in &reports {
        print!("{r}");
    }
    if reports.iter().all(|r| r.passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn dispatch(cli: Cli) -> std::result::Result<ExitCode, BadInput> {
    let exec = |r: Result<ExitCode>| {
        Ok(r.unwrap_or_else(|e| {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }))
    };
    match cli.command {
        Command::Run { controller, seed, config, out } => {
            let cfg = load_config(config.as_deref())?;
            exec(run(&cfg, controller, seed, &out))
        }
        Command::Mc { runs, seed, controllers, workers, config, out, keep_logs } => {
            let mut cfg = load_config(config.as_deref())?;
            let mc = &mut cfg.monte_carlo;
            mc.runs = runs.unwrap_or(mc.runs);
            mc.seed = seed.unwrap_or(mc.seed);
            mc.workers = workers.unwrap_or(mc.workers);
            if let Some(c) = controllers {
                mc.controllers = c;
            }
            cfg.validate().map_err(|e| BadInput(e.into()))?;
            exec(monte_carlo(&cfg, &out, keep_logs))
        }
        Command::Verify { seed } => Ok(verify_all(seed)),
        Command::Plan { seed, config, out } => {
            let cfg = load_config(config.as_deref())?;
            exec(plan(&cfg, seed, out.as_deref()))
        }
        Command::Config => exec((|| {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(Config::default().to_toml_string()?.as_bytes())?;
            Ok(ExitCode::SUCCESS)
        })()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    dispatch(cli).unwrap_or_else(|BadInput(e)| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
