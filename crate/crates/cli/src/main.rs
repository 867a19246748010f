use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slab::config::{ExperimentConfig, ExperimentKind};
use slab::criteria::{self, Status};

#[derive(Parser)]
#[command(name = "slab", version, about = "Experiments on compact groups, couplings and approximate homomorphisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for the JSON record and CSV tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also write plot-ready CSV series.
    #[arg(long, global = true)]
    emit_plot_data: bool,
}

#[derive(Subcommand)]
enum Command {
    Walk,
    Transport,
    Approxhom,
    Counterexample,
    Ift,
    Bch,
    Entropy,
    /// Run the acceptance criteria: "all", a suite name or a criterion number.
    Verify {
        #[arg(default_value = "all")]
        selector: String,
    },
}

fn experiment(cli: &Cli, kind: ExperimentKind) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = config.experiment {
        if k != kind {
            anyhow::bail!("config selects experiment {:?} but the subcommand is {}", k.name(), kind.name());
        }
    }
    config.experiment = Some(kind);
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let out = slab::run(&config)?;
    for p in slab::write_outputs(&out, &cli.out, cli.emit_plot_data)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = match &cli.command {
        Command::Walk => ExperimentKind::Walk,
        Command::Transport => ExperimentKind::Transport,
        Command::Approxhom => ExperimentKind::Approxhom,
        Command::Counterexample => ExperimentKind::Counterexample,
        Command::Ift => ExperimentKind::Ift,
        Command::Bch => ExperimentKind::Bch,
        Command::Entropy => ExperimentKind::Entropy,
        Command::Verify { selector } => {
            return match criteria::run_selected(selector) {
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
                Ok(outcomes) => {
                    for o in &outcomes {
                        println!("{o}");
                    }
                    if outcomes.iter().any(|o| o.status == Status::Fail) {
                        ExitCode::FAILURE
                    } else {
                        ExitCode::SUCCESS
                    }
                }
            };
        }
    };
    match experiment(&cli, kind) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
