use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoact::eval::AblationAxis;
use geoact::models::{ModelError, ModelFamily};

mod run;

/// Exit status for usage errors such as an unknown flag.
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "geoact", version, about = "Offline-activity inference from grid-anonymized check-ins")]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory holding datasets and outputs.
    #[arg(long, global = true, value_name = "DIR")]
    workdir: Option<PathBuf>,

    /// Worker threads; defaults to all logical cores.
    #[arg(long, global = true, env = "GEOACT_THREADS")]
    threads: Option<usize>,

    /// More log output; repeat for debug level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic check-in dump and matching city file.
    Synth(SynthArgs),
    /// Parse, anonymize and split raw check-ins into per-city datasets.
    Ingest(IngestArgs),
    /// Write train and test feature matrices for one city as CSV.
    Features(FeaturesArgs),
    /// Fit one model on a city's training split.
    Train(TrainArgs),
    /// Random hyperparameter search with k-fold cross validation.
    Tune(TuneArgs),
    /// Score a saved model on a dataset split.
    Evaluate(EvaluateArgs),
    /// Re-run train/test evaluation along one feature ablation axis.
    Ablate(AblateArgs),
    /// Export predicted and true activity per grid cell as GeoJSON.
    ExportMap(ExportMapArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for checkins.tsv and cities.toml.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Check-ins per city.
    #[arg(long)]
    checkins: Option<usize>,
    /// Restrict to these cities (repeatable).
    #[arg(long = "city")]
    cities: Vec<String>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Tab-separated check-in dump, optionally gzip-compressed.
    #[arg(long)]
    input: Option<PathBuf>,
    /// City list as `[[city]]` TOML tables.
    #[arg(long)]
    cities: Option<PathBuf>,
    /// Category mapping file; the bundled Foursquare mapping when omitted.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Output directory; same as --workdir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Geohash resolution the coordinates are replaced by.
    #[arg(long)]
    resolution: Option<u8>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Split seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    city: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Model family: knn, gbt, mlp or rmlp.
    #[arg(long)]
    model: Option<ModelFamily>,
    /// Pin a hyperparameter, e.g. `--set max_depth=8` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Take family and hyperparameters from a tuning result.
    #[arg(long, value_name = "BEST_JSON")]
    from_best: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    city: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Model seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    city: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Search space (TOML); the published space for the family by default.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    max_secs: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Search seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    city: String,
    #[arg(long)]
    axis: AblationAxis,
    #[command(flatten)]
    model: ModelArgs,
    /// Model seed shared by every variant.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportMapArgs {
    #[arg(long)]
    model: PathBuf,
    /// Geohash resolution of the exported cells.
    #[arg(long, default_value_t = 6)]
    resolution: u8,
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// 2 for bad inputs or missing artifacts, 3 for diverged training.
fn exit_code(e: &geoact::Error) -> u8 {
    use geoact::Error as E;
    match e {
        E::Model(ModelError::Diverged { .. }) => 3,
        E::Ingest(_) | E::Io { .. } | E::Config(_) | E::Json(_) | E::Model(ModelError::Format(_)) => 2,
        E::Tuning(_) | E::Feature(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        geoact::par::init_threads(n.max(1));
    }
    match run::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
