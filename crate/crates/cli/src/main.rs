mod commands;
mod socket;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use footgait::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "footgait", version, about = "Footstep-constrained biped training, evaluation and serving")]
struct Cli {
    /// TOML run configuration; missing keys take preset values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    port: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    /// Error of a constant command held for consecutive steps, per grid cell.
    ConstantMap,
    /// Mean and spread of error under random command increments.
    RandomIncrements,
    /// Fixed per-foot step-length lists.
    ScriptedSequence,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy; resumes from the run directory's latest checkpoint.
    Train {
        /// Run directory (defaults to `paths.run_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override `train.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run an evaluation protocol against a policy checkpoint.
    Eval {
        #[arg(value_enum)]
        protocol: Protocol,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Report directory (defaults to `paths.reports`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect a touchdown-to-touchdown dataset with a trained policy.
    CollectTd2td {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override `td2td.resets`.
        #[arg(long)]
        resets: Option<usize>,
    },
    /// Fit the reachability model to a collected dataset.
    TrainModel {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Shuffle labels against inputs (control run).
        #[arg(long)]
        permute_labels: bool,
    },
    /// Run the simulation live over a WebSocket.
    Serve {
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Reachability model checkpoint answering `reachability` requests.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        faster_than_realtime: bool,
        /// Exit after this many client sessions.
        #[arg(long)]
        max_clients: Option<usize>,
    },
    /// Play a command script through the serving loop, writing frames.
    Replay {
        /// Lines of `foot L theta`.
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Frame log, one JSON message per line.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(p) = cli.port {
        cfg.serve.port = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Train { out, iterations } => {
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            commands::train(&cfg, &out.unwrap_or_else(|| cfg.paths.run_dir.clone()))
        }
        Command::Eval { protocol, policy, out } => commands::eval(
            &cfg,
            protocol,
            &policy.unwrap_or_else(|| cfg.paths.policy.clone()),
            &out.unwrap_or_else(|| cfg.paths.reports.clone()),
        ),
        Command::CollectTd2td { policy, out, resets } => {
            if let Some(n) = resets {
                cfg.td2td.resets = n;
            }
            commands::collect_td2td(
                &cfg,
                &policy.unwrap_or_else(|| cfg.paths.policy.clone()),
                &out.unwrap_or_else(|| cfg.paths.dataset.clone()),
            )
        }
        Command::TrainModel {
            dataset,
            out,
            permute_labels,
        } => {
            cfg.td2td.model.permute_labels |= permute_labels;
            commands::train_model(
                &cfg,
                &dataset.unwrap_or_else(|| cfg.paths.dataset.clone()),
                &out.unwrap_or_else(|| cfg.paths.model.clone()),
            )
        }
        Command::Serve {
            policy,
            model,
            faster_than_realtime,
            max_clients,
        } => {
            cfg.serve.faster_than_realtime |= faster_than_realtime;
            socket::serve(
                &cfg,
                &policy.unwrap_or_else(|| cfg.paths.policy.clone()),
                model.as_deref(),
                max_clients,
            )
        }
        Command::Replay {
            script,
            policy,
            out,
            max_steps,
        } => commands::replay(
            &cfg,
            &script,
            &policy.unwrap_or_else(|| cfg.paths.policy.clone()),
            &out,
            max_steps,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
