use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use uavchan::simctl::{run_pipeline, sweep, ExperimentConfig, RunStatus, SweepAxis, Target};

/// Cooperative mmWave channel modeling in a simulated UAV network.
#[derive(Debug, Parser)]
#[command(name = "uavchan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate and write the synthetic scene.
    Scene,
    /// Scene plus per-UAV pilot datasets.
    Collect,
    /// Collect plus link budgets and ring formation.
    Form,
    /// Form plus the convergence report.
    Converge,
    /// Form plus distributed GAN training.
    Train,
    /// Train plus JSD and rate evaluation.
    Evaluate,
    /// Every stage.
    Run,
    /// Convergence analytics (and optionally full runs) over one parameter.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Also run the full pipeline for every value.
        #[arg(long)]
        full: bool,
    },
    /// Print the effective config as TOML.
    Config,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    Eta,
    Uavs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    let out = PathBuf::from(&cfg.output_dir);

    let target = match cli.command {
        Command::Scene => Target::Scene,
        Command::Collect => Target::Collect,
        Command::Form => Target::Form,
        Command::Converge => Target::Converge,
        Command::Train => Target::Train,
        Command::Evaluate => Target::Evaluate,
        Command::Run => Target::Run,
        Command::Config => {
            print!("{}", cfg.to_toml());
            return Ok(ExitCode::SUCCESS);
        }
        Command::Sweep { axis, values, full } => {
            let axis = match axis {
                Axis::Eta => SweepAxis::Eta,
                Axis::Uavs => SweepAxis::Uavs,
            };
            let points = sweep(&cfg, axis, &values, full, &out)?;
            let failed = points.iter().filter(|p| p.failure.is_some()).count();
            println!("sweep over {}: {} values, {failed} failed; results in {}", axis.name(), points.len(), out.display());
            return Ok(ExitCode::SUCCESS);
        }
    };

    let report = run_pipeline(&cfg, target, &out)?;
    for row in &report.evaluation {
        let value = row
            .avg_rate_bps
            .map(|r| format!("avg_rate_bps={r:.6e}"))
            .or(row.jsd.map(|j| format!("jsd={j:.4}")))
            .unwrap_or_default();
        println!("{:<16} {value}", row.scheme);
    }
    println!("{} files written to {}", report.files.len() + 1, out.display());
    Ok(match report.status {
        RunStatus::Completed => ExitCode::SUCCESS,
        RunStatus::Infeasible => {
            eprintln!("formation infeasible: no ring satisfies the link constraints");
            ExitCode::from(2)
        }
    })
}
