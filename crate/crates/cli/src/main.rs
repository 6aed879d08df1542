//! `fedtp` — single entry point for data generation, simulated and
//! networked federated runs, baselines, sweeps, timing studies, and report
//! tables.
//!
//! Exit codes: 0 success, 1 experiment failure, 2 configuration/usage
//! error.

mod config;
mod gen_data;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedtp_core::harness::{
    report, run_fraction_sweep, run_target_sweep, run_timing, ExperimentConfig, Method,
    SweepResult,
};
use fedtp_core::metrics::{write_round_metrics_csv, write_trials_csv};
use fedtp_core::nn::save_checkpoint;
use fedtp_core::Real;
use fedtp_net::{broker_serve, client_node, server_node, ClientNodeConfig, CredentialStore,
    ServerNodeConfig};

#[derive(Parser)]
#[command(name = "fedtp", version, about = "Federated learning engine with task-personalized aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<timestamp>-<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// key=value overrides applied to the config (dotted paths).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-domain datasets as CSV files + manifests.
    GenData {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run one federated simulation and write metrics + checkpoints.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a non-federated baseline (il, cl, ctl).
    Baseline {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Full target sweep with the two-stage aggregation protocol.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Additionally sweep these client fractions (comma-separated).
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
    },
    /// Wall-clock comparison of FTL-TP against summed single-group runs.
    Timing {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        rounds: u32,
        /// Measurement repetitions (median reported).
        #[arg(long, default_value_t = 3)]
        reps: u32,
    },
    /// Render comparison tables from a directory of sweep outputs.
    Report {
        /// Directory containing sweep outputs.
        #[arg(long)]
        results: PathBuf,
        /// Optional CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the message broker.
    Broker {
        /// Listen address, e.g. 127.0.0.1:5672.
        #[arg(long, default_value = "127.0.0.1:5672")]
        listen: PathBufOrAddr,
        /// Credentials file with user:password lines.
        #[arg(long)]
        credentials: PathBuf,
    },
    /// Run the federation server node over a broker.
    Server {
        /// Server node config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a client daemon.
    Client {
        #[arg(long)]
        id: u32,
        #[arg(long)]
        group: String,
        /// Client dataset CSV.
        #[arg(long)]
        data: PathBuf,
        /// Broker address (FEDTP_BROKER env var overrides).
        #[arg(long, default_value = "127.0.0.1:5672")]
        broker: String,
        /// user:password pair.
        #[arg(long)]
        credentials: String,
        /// Feature width of the data file (defaults to 624).
        #[arg(long)]
        feature_dim: Option<usize>,
        /// Exit if no model arrives for this many seconds.
        #[arg(long, default_value_t = 300)]
        idle_timeout: u64,
    },
}

type PathBufOrAddr = String;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.downcast_ref::<ConfigError>().is_some() {
                2
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}

/// Marker for failures that are the user's configuration rather than the
/// experiment.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(anyhow::Error::new(ConfigError(msg.into())))
}

fn load_experiment(run: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &run.config {
        Some(path) => config::load_with_overrides(path, &run.overrides)
            .map_err(|e| anyhow::Error::new(ConfigError(format!("{e:#}"))))?,
        None => {
            if !run.overrides.is_empty() {
                let defaults = ExperimentConfig::default_m_s(Method::FtlTp);
                let mut doc = serde_json::to_value(&defaults)?;
                for o in &run.overrides {
                    config::apply_override(&mut doc, o)
                        .map_err(|e| anyhow::Error::new(ConfigError(format!("{e:#}"))))?;
                }
                serde_json::from_value(doc)
                    .map_err(|e| anyhow::Error::new(ConfigError(e.to_string())))?
            } else {
                ExperimentConfig::default_m_s(Method::FtlTp)
            }
        }
    };
    if let Some(seed) = run.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()
        .map_err(|e| anyhow::Error::new(ConfigError(e.to_string())))?;
    Ok(cfg)
}

fn out_dir(run: &RunArgs, seed: u64) -> Result<PathBuf> {
    let dir = match &run.out {
        Some(d) => d.clone(),
        None => {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{ts}-{seed}"))
        }
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output dir {}", dir.display()))?;
    Ok(dir)
}

fn write_sweep(dir: &Path, sweep: &SweepResult) -> Result<()> {
    write_trials_csv(&dir.join("trials.csv"), &sweep.rows)?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(sweep)?,
    )?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { run } => gen_data::run(&run),
        Command::Simulate { run } => {
            let cfg = load_experiment(&run)?;
            if cfg.method.as_strategy().is_none() {
                return config_err(format!(
                    "method {:?} is a baseline; use the `baseline` subcommand",
                    cfg.method.name()
                ));
            }
            simulate(&run, cfg)
        }
        Command::Baseline { run } => {
            let cfg = load_experiment(&run)?;
            if cfg.method.as_strategy().is_some() {
                return config_err(format!(
                    "method {:?} is federated; use the `simulate` subcommand",
                    cfg.method.name()
                ));
            }
            simulate(&run, cfg)
        }
        Command::Sweep { run, fractions } => {
            let cfg = load_experiment(&run)?;
            let dir = out_dir(&run, cfg.master_seed)?;
            cfg.save(&dir.join("config.json"))?;
            if fractions.is_empty() {
                let sweep = run_target_sweep::<Real>(&cfg)?;
                write_sweep(&dir, &sweep)?;
                println!(
                    "sweep {}: mean {:.4} +/- {:.4} ({} trials) -> {}",
                    sweep.method,
                    sweep.mean_of_means,
                    sweep.mean_of_stds,
                    sweep.rows.len(),
                    dir.display()
                );
            } else {
                let rows = run_fraction_sweep::<Real>(&cfg, &fractions)?;
                let mut table = String::from("fraction,mean,std\n");
                for row in &rows {
                    let sub = dir.join(format!("fraction-{:.4}", row.fraction));
                    std::fs::create_dir_all(&sub)?;
                    write_sweep(&sub, &row.result)?;
                    table.push_str(&format!(
                        "{},{},{}\n",
                        row.fraction, row.result.mean_of_means, row.result.mean_of_stds
                    ));
                }
                std::fs::write(dir.join("fractions.csv"), &table)?;
                println!("fraction sweep -> {}", dir.display());
                print!("{table}");
            }
            Ok(())
        }
        Command::Timing { run, rounds, reps } => {
            let cfg = load_experiment(&run)?;
            let dir = out_dir(&run, cfg.master_seed)?;
            let report = run_timing::<Real>(&cfg, rounds, reps)?;
            std::fs::write(
                dir.join("timing.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            let mut csv = String::from("label,wall_ms\n");
            for row in &report.rows {
                csv.push_str(&format!("{},{}\n", row.label, row.wall_ms));
            }
            std::fs::write(dir.join("timing.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Report { results, out } => {
            let table = report(&results)?;
            print!("{}", table.render());
            if let Some(path) = out {
                std::fs::write(&path, table.to_csv())?;
            }
            if table.warnings.is_empty() {
                Ok(())
            } else {
                bail!("report finished with {} warnings", table.warnings.len())
            }
        }
        Command::Broker {
            listen,
            credentials,
        } => {
            let creds = CredentialStore::from_file(&credentials)
                .map_err(|e| anyhow::Error::new(ConfigError(e.to_string())))?;
            let handle = broker_serve(&listen, creds)
                .map_err(|e| anyhow::Error::new(ConfigError(e.to_string())))?;
            println!("broker listening on {}", handle.addr());
            loop {
                std::thread::park();
            }
        }
        Command::Server { config, overrides } => {
            let cfg: ServerNodeConfig = config::load_with_overrides(&config, &overrides)
                .map_err(|e| anyhow::Error::new(ConfigError(format!("{e:#}"))))?;
            let models = server_node(&cfg)?;
            for group in models.keys() {
                println!(
                    "final checkpoint: {}",
                    cfg.checkpoint_dir.join(format!("{group}.ckpt")).display()
                );
            }
            Ok(())
        }
        Command::Client {
            id,
            group,
            data,
            broker,
            credentials,
            feature_dim,
            idle_timeout,
        } => {
            let (user, pass) = credentials
                .split_once(':')
                .map(|(u, p)| (u.to_string(), p.to_string()))
                .unwrap_or((credentials.clone(), String::new()));
            if user.is_empty() || pass.is_empty() {
                return config_err("credentials must be user:password");
            }
            let broker_addr = std::env::var("FEDTP_BROKER").unwrap_or(broker);
            let cfg = ClientNodeConfig {
                broker_addr,
                username: user,
                password: pass,
                client_id: id,
                group,
                data_path: data,
                feature_dim,
                idle_timeout_secs: idle_timeout,
            };
            let report = client_node(&cfg)?;
            println!(
                "client {id}: {} rounds seen, {} updates published",
                report.rounds_seen, report.updates_published
            );
            Ok(())
        }
    }
}

fn simulate(run: &RunArgs, cfg: ExperimentConfig) -> Result<()> {
    let dir = out_dir(run, cfg.master_seed)?;
    cfg.save(&dir.join("config.json"))?;
    let target_b = cfg.effective_target_b();
    let result = fedtp_core::harness::run_trial::<Real>(&cfg, &cfg.target_a, &target_b, 0)?;
    write_round_metrics_csv(&dir.join("metrics.csv"), &result.metrics)?;
    for (name, model) in &result.models {
        save_checkpoint(&dir.join(format!("{name}.ckpt")), model)?;
    }
    let summary = serde_json::json!({
        "method": cfg.method.name(),
        "target_a": cfg.target_a,
        "target_b": target_b,
        "accuracy_a": result.accuracy_a,
        "accuracy_b": result.accuracy_b,
        "warnings": result.warnings,
    });
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "{}: target {} accuracy {:.4} -> {}",
        cfg.method.name(),
        cfg.target_a,
        result.accuracy_a,
        dir.display()
    );
    Ok(())
}
