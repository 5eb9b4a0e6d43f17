use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Deterministic CAN bus security testbed.
#[derive(Parser)]
#[command(name = "cantestbed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned text for people.
    Table,
    /// One JSON document per line.
    Records,
}

#[derive(Args, Clone, Debug, Default)]
pub struct SimFlags {
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the bus bitrate in bit/s.
    #[arg(long)]
    pub bitrate: Option<u32>,
    /// Which IDS deployments to simulate: ecu, controller or both.
    #[arg(long)]
    pub strategy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report bundle.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Directory for the report bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Push a labelled CSV trace through the detector and score it.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        /// Stretch (>1) or compress (<1) the trace timeline.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Output directory for the scored run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the control service.
    Serve {
        #[arg(long, default_value_t = cantestbed_service::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Scenario loaded at start.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Base directory for paths in commands.
        #[arg(long, default_value = ".")]
        root: PathBuf,
        /// Serve the web console from this directory.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Train a detector on a corpus and quantise it.
    Train {
        /// Corpus: a scenario file or a labelled CSV trace.
        #[arg(default_value = "scenarios/corpus.scenario")]
        corpus: PathBuf,
        /// Quantised model output.
        #[arg(long)]
        out: PathBuf,
        /// Also keep the float reference model.
        #[arg(long)]
        float_out: Option<PathBuf>,
        /// Weight-initialisation and shuffling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Leading fraction of windows used for training.
        #[arg(long, default_value_t = cantestbed::scenario::DEFAULT_TRAIN_FRACTION)]
        train_fraction: f64,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Quantise a float model to int4.
    Quantise {
        float: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recalibrate activation ranges on this corpus first.
        #[arg(long)]
        calibrate: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Score a model or a predictions file against a labelled trace.
    Eval {
        /// Ground truth: a labelled CSV trace or a scenario file.
        truth: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        model: Option<PathBuf>,
        /// CSV trace whose labels are predictions for the same frames.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Render a report bundle directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

/// Exit status 3: bad input files or arguments that parse but do not
/// validate. Status 1: the run itself failed.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Failed(String),
}

impl CliError {
    pub fn validation(e: impl std::fmt::Display) -> CliError {
        CliError::Validation(e.to_string())
    }

    pub fn failed(e: impl std::fmt::Display) -> CliError {
        CliError::Failed(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, sim, format, out } => commands::run(&scenario, &sim, format, out.as_deref()),
        Command::Replay { trace, model, sim, time_scale, format, out } => {
            commands::replay(&trace, &model, &sim, time_scale, format, out.as_deref())
        }
        Command::Serve { port, bind, scenario, root, static_dir } => {
            commands::serve(&bind, port, scenario.as_deref(), root, static_dir)
        }
        Command::Train { corpus, out, float_out, seed, epochs, train_fraction, format } => {
            commands::train(&corpus, &out, float_out.as_deref(), seed, epochs, train_fraction, format)
        }
        Command::Quantise { float, out, calibrate, format } => commands::quantise(&float, &out, calibrate.as_deref(), format),
        Command::Eval { truth, model, predictions, format } => {
            commands::eval(&truth, model.as_deref(), predictions.as_deref(), format)
        }
        Command::Report { dir, format } => commands::report(&dir, format),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
