use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dfc::agents::ObjectiveLevel;
use dfc::codec::Level;
use dfc::config::RunConfig;
use dfc::pipeline::{self, Artifacts};

/// Dynamic feature compression for remote CartPole control.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// TOML run configuration; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides `run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Observer objective level (overrides `train.level`).
    #[arg(long, global = true)]
    level: Option<ObjectiveLevel>,
    /// Cost per byte (overrides `train.beta`).
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Run directory (overrides `run.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record random-policy transitions for codebook fitting.
    CollectDataset,
    /// Fit the quantizer ensemble on the collected dataset.
    TrainCodec,
    /// Train a robot on messages of one level (default: the finest).
    TrainRobot {
        #[arg(long)]
        bits: Option<Level>,
    },
    /// Train the state regressor used by the semantic objective.
    TrainRegressor,
    /// Train an observer for the configured level and beta.
    TrainObserver {
        /// Train every level over its evaluation beta grid instead.
        #[arg(long)]
        grid: bool,
    },
    /// Evaluate static and dynamic schemes and write pareto.csv, lenhist.csv and traces.
    Evaluate,
    /// Build heatmaps and AoI distributions from saved traces.
    Analyze,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(level) = cli.level {
        cfg.train.level = level;
    }
    if let Some(beta) = cli.beta {
        cfg.train.beta = beta;
    }
    if let Some(out) = &cli.out {
        cfg.run.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let art = Artifacts::new(&cfg.run.out);
    std::fs::create_dir_all(&art.dir).with_context(|| format!("creating {}", art.dir.display()))?;
    std::fs::write(art.config(), cfg.to_toml())?;
    match &cli.command {
        Command::CollectDataset => {
            pipeline::run_collect_dataset(&art, &cfg)?;
            log::info!("wrote {}", art.dataset().display());
        }
        Command::TrainCodec => {
            pipeline::run_train_codec(&art, &cfg)?;
            log::info!("wrote {}", art.codec().display());
        }
        Command::TrainRobot { bits } => {
            let bits = bits.unwrap_or(cfg.codec.max_level);
            pipeline::run_train_robot(&art, &cfg, bits)?;
            log::info!("wrote {}", art.robot(bits).display());
        }
        Command::TrainRegressor => {
            pipeline::run_train_regressor(&art, &cfg)?;
            log::info!("wrote {}", art.regressor().display());
        }
        Command::TrainObserver { grid } => {
            if *grid {
                pipeline::run_train_observer_grid(&art, &cfg)?;
            } else {
                pipeline::run_train_observer(&art, &cfg)?;
                log::info!("wrote {}", art.observer(cfg.train.level, cfg.train.beta).display());
            }
        }
        Command::Evaluate => {
            let results = pipeline::run_evaluate(&art, &cfg)?;
            for r in &results {
                println!(
                    "{:<17} {:>2} {:>8} ell {:6.3} len {:6.1} [{:.1}, {:.1}]",
                    r.scheme,
                    r.level,
                    if r.beta.is_nan() { "-".to_string() } else { r.beta.to_string() },
                    r.suite.point.mean_ell,
                    r.suite.point.mean_length,
                    r.ci.0,
                    r.ci.1
                );
            }
        }
        Command::Analyze => {
            for p in pipeline::run_analyze(&art, &cfg)? {
                log::info!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

/// 1 for problems the user can fix (bad flags, config or missing inputs),
/// 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use dfc::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidValue { .. } | E::MissingArtifact(_) | E::UnknownLevel(_) | E::Format { .. } | E::Empty(_),
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
