mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use opg_core::eval::AblationAxis;
use opg_core::model::Preset;
use opg_core::OpgError;

#[derive(Debug, Parser)]
#[command(
    name = "opg",
    version,
    about = "Open-set recognition with rotation-generated pseudo-unseen classes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model: step one, then step two, or cold start.
    Train(TrainArgs),
    /// Score a split's test samples with a checkpoint.
    Eval(EvalArgs),
    /// Sweep one config axis and compare the cells.
    Ablate(AblateArgs),
    /// Summarize the run record of a finished or partial run.
    Report(ReportArgs),
    /// Write the procedural shapes benchmark.
    Synth(SynthArgs),
    /// Print a preset config as TOML.
    Init(InitArgs),
}

#[derive(Debug, Args)]
pub struct ConfigSource {
    /// Run config file.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in preset, used instead of a config file.
    #[arg(long, value_parser = parse_preset, requires = "split")]
    pub preset: Option<Preset>,
    /// Dataset root for `--preset`. Falls back to OPG_DATA_ROOT.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split file for `--preset`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint; without a value, the run's latest one.
    #[arg(long, num_args = 0..=1)]
    pub resume: Option<Option<PathBuf>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config for data root, holdout and bins. Defaults to the run's snapshot.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root. Overrides the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also write penultimate features.
    #[arg(long)]
    pub features: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// augmentation_kind, total_classes or schedule_mode.
    #[arg(long, value_parser = parse_axis)]
    pub axis: AblationAxis,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Where to write the summary; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 210)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 90)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 123)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Preset,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    match s {
        "paper-cifar" => Ok(Preset::PaperCifar),
        "paper-tiny" => Ok(Preset::PaperTiny),
        "desk" => Ok(Preset::Desk),
        _ => Err(format!(
            "unknown preset `{s}` (expected paper-cifar, paper-tiny or desk)"
        )),
    }
}

fn parse_axis(s: &str) -> Result<AblationAxis, String> {
    s.parse::<AblationAxis>().map_err(|e| e.to_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .find_map(|e| e.downcast_ref::<OpgError>())
        .is_some_and(OpgError::is_validation);
    if validation || err.chain().any(|e| e.is::<commands::UsageError>()) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Report(a) => commands::report(a),
        Command::Synth(a) => commands::synth(a),
        Command::Init(a) => commands::init(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
