use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use concord_cli::config::{validate_table, ExperimentKind};
use concord_cli::{run, ConfigErrors, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "concord", version, about = "Train classifier cohorts and run consensus experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever `kind` the config file names.
    Run(Flags),
    /// Print the resolved config, or every problem with it.
    Validate(Flags),
    /// Train a cohort and store its checkpoints.
    TrainCohort(Flags),
    /// Threshold sweep of coverage and conditional accuracy.
    Sweep(Flags),
    /// Individual models against the combined consensus.
    Compare(Flags),
    /// Validation loss split by correct and incorrect samples.
    Decompose(Flags),
    /// Loss densities of correct and incorrect samples.
    Histogram(Flags),
    /// Per-sample training dynamics across the cohort.
    Trace(Flags),
    /// Accuracy and loss along the line between two solutions.
    Interpolate(Flags),
    /// Softmax scale sensitivity on a fixed logit vector.
    ScaleDemo(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; cohort seeds default to seed+1, seed+2, ...
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Comma-separated threshold grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    thresholds: Option<Vec<f64>>,
    /// Comma-separated interpolation coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alphas: Option<Vec<f64>>,
    /// Comma-separated dropout rates (several only for sweep).
    #[arg(long, value_delimiter = ',')]
    dropout: Option<Vec<f64>>,
}

impl Flags {
    fn overrides(&self, kind: Option<ExperimentKind>) -> Overrides {
        Overrides {
            kind,
            out: self.out.clone(),
            seed: self.seed,
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch,
            thresholds: self.thresholds.clone(),
            alphas: self.alphas.clone(),
            dropout: self.dropout.clone(),
        }
    }

    fn resolve(&self, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, ConfigErrors> {
        let mut table = match &self.config {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .map_err(|e| ConfigErrors::single("--config", format!("{}: {e}", path.display())))?;
                raw.parse().map_err(|e: toml::de::Error| ConfigErrors::single(path.display().to_string(), e.message()))?
            }
            None => toml::Table::new(),
        };
        self.overrides(kind).apply(&mut table)?;
        validate_table(&table)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (flags, kind, dry) = match &cli.command {
        Command::Run(f) => (f, None, false),
        Command::Validate(f) => (f, None, true),
        Command::TrainCohort(f) => (f, Some(ExperimentKind::TrainCohort), false),
        Command::Sweep(f) => (f, Some(ExperimentKind::Sweep), false),
        Command::Compare(f) => (f, Some(ExperimentKind::Compare), false),
        Command::Decompose(f) => (f, Some(ExperimentKind::Decompose), false),
        Command::Histogram(f) => (f, Some(ExperimentKind::Histogram), false),
        Command::Trace(f) => (f, Some(ExperimentKind::Trace), false),
        Command::Interpolate(f) => (f, Some(ExperimentKind::Interpolate), false),
        Command::ScaleDemo(f) => (f, Some(ExperimentKind::ScaleDemo), false),
    };
    let cfg = match flags.resolve(kind) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if dry {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    if let Some(n) = flags.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot start {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cfg) {
        Ok(summary) => {
            for note in &summary.notes {
                println!("{note}");
            }
            println!("{} artifacts written to {}", summary.manifest.artifacts.len() + 1, cfg.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
