use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netude_cli::{
    apply_overrides, cmd_evaluate, cmd_simulate, cmd_sweep, cmd_train, cmd_transfer, CommandKind,
    ConfigError, Overrides, RunConfig, TransferConfig,
};

/// Structural inference for networked oscillators with universal differential equations.
#[derive(Debug, Parser)]
#[command(name = "netude", version)]
struct Cli {
    /// TOML run configuration; all fields default to the reference experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Initial-condition seed for `simulate`, model seed for everything else.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sparsity weight; replaces `train.alpha` and the sweep grid.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the ground-truth network into data/.
    Simulate,
    /// Two-phase training at a single alpha.
    Train,
    /// One training run per alpha, plus model selection on dev MSE.
    Sweep,
    /// Split MSEs and an open-loop rollout of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Deploy learned physics on another network.
    Transfer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// TOML transfer spec; defaults to the config's [transfer] table.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Print the resolved configuration and its hash.
    Config,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let kind = match cli.command {
        Command::Simulate => CommandKind::Simulate,
        Command::Train => CommandKind::Train,
        Command::Sweep => CommandKind::Sweep,
        Command::Evaluate { .. } => CommandKind::Evaluate,
        Command::Transfer { .. } => CommandKind::Transfer,
        Command::Config => CommandKind::Config,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let ov = Overrides {
        out: cli.out,
        seed: cli.seed,
        alpha: cli.alpha,
    };
    apply_overrides(&mut cfg, &ov, kind);
    match cli.command {
        Command::Simulate => {
            let layout = cmd_simulate(&cfg)?;
            eprintln!("wrote {}", layout.trajectory_csv().display());
        }
        Command::Train => {
            let m = cmd_train(&cfg)?;
            eprintln!(
                "alpha {:e}: mse train {:.3e} dev {:.3e} test {:.3e}, exact match {}",
                m.alpha,
                m.mse_train,
                m.mse_dev,
                m.mse_test,
                m.adj_exact_match.map_or("n/a".into(), |b| b.to_string())
            );
        }
        Command::Sweep => {
            let s = cmd_sweep(&cfg, cli.parallel)?;
            for m in &s.metrics {
                eprintln!(
                    "alpha {:e}: mse dev {:.3e}, |A|_1 {:.3}",
                    m.alpha, m.mse_dev, m.a_l1
                );
            }
            if let Some(sel) = &s.selected {
                eprintln!("selected alpha {:e} ({})", sel.alpha, sel.checkpoint);
            }
            if s.failures > 0 {
                anyhow::bail!(
                    "{} of {} sweep runs failed; see metrics/sweep_runs.json",
                    s.failures,
                    s.metrics.len()
                );
            }
        }
        Command::Evaluate { checkpoint } => {
            let r = cmd_evaluate(&cfg, checkpoint.as_deref())?;
            eprintln!(
                "rollout mse {:.3e}, transient mse {:.3e}",
                r.rollout_mse, r.transient_mse
            );
        }
        Command::Transfer { checkpoint, spec } => {
            let spec = spec.map(|p| TransferConfig::from_file(&p)).transpose()?;
            let r = cmd_transfer(&cfg, checkpoint.as_deref(), spec.as_ref())?;
            eprintln!(
                "transfer rollout mse {:.3e}, amplitude ratios {:?}",
                r.rollout_mse, r.amplitude_ratio
            );
        }
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml()?);
            println!("# config_hash: {}", cfg.hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
