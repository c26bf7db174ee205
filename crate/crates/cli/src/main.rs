use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gtf_core::experiment::{self, ExperimentConfig, Sweep, SweepAxis, ToleranceProfile};
use gtf_core::GtfError;

#[derive(Parser)]
#[command(name = "gtf", version, about = "Noise-space guidance composition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point of a config and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `sampler.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis and write a ranked comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// One of w1, w2, scheduler, cfg.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; `all` expands to every scheduler.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the small denoiser on the config's analytic world.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the invariant and oracle suite on the analytic worlds.
    Check {
        #[arg(long, value_enum, default_value_t = Profile::Default)]
        tolerance_profile: Profile,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Default,
    Strict,
}

fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig, GtfError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.sampler.seed = seed;
    }
    if let Some(out) = out {
        config.output.dir = out;
    }
    Ok(config)
}

fn print_rows(summary: &experiment::RunSummary) {
    println!("{}", experiment::METRICS_HEADER);
    for row in &summary.rows {
        println!("{}", row.csv_line());
    }
    println!("artifacts in {}", summary.out_dir.display());
}

fn execute(cli: Cli) -> Result<bool, GtfError> {
    experiment::configure_threads_from_env()?;
    match cli.command {
        Command::Run { config, seed, out } => {
            let config = load(&config, seed, out)?;
            print_rows(&experiment::run(&config)?);
            Ok(true)
        }
        Command::Ablate {
            config,
            axis,
            values,
            seed,
            out,
        } => {
            let config = load(&config, seed, out)?;
            let axis: SweepAxis = axis.parse()?;
            let values: Vec<&str> = values.iter().map(String::as_str).collect();
            let summary = experiment::ablate(&config, Sweep::parse(axis, &values)?)?;
            print_rows(&summary);
            Ok(true)
        }
        Command::Train { config, checkpoint } => {
            let config = ExperimentConfig::load(&config)?;
            let (_, report) = experiment::train_checkpoint(&config, &checkpoint)?;
            println!("initial loss {:.6}", report.initial_loss);
            for (epoch, loss) in report.loss_history.iter().enumerate() {
                println!("epoch {:>3} loss {loss:.6}", epoch + 1);
            }
            println!("checkpoint written to {}", checkpoint.display());
            Ok(true)
        }
        Command::Check { tolerance_profile } => {
            let profile = match tolerance_profile {
                Profile::Default => ToleranceProfile::Default,
                Profile::Strict => ToleranceProfile::Strict,
            };
            let report = experiment::check(profile)?;
            for item in &report.items {
                println!("{item}");
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("gtf: {e}");
            ExitCode::from(2)
        }
    }
}
