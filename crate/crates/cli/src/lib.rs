//! Command-line layer of `masked-llp`: argument parsing, run configuration
//! and the subcommands (generate, train, eval, plot-losses, visualize).

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use masked_llp::pipeline::MaskMode;
use masked_llp::synthgen::BenchmarkProfile;
use masked_llp::LossMode;

use crate::config::{RunConfig, SEED_ENV};

#[derive(Debug, Parser)]
#[command(name = "masked-llp", version, about = "Masked learning from label proportions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic benchmark dataset.
    Generate(RunArgs),
    /// Train stage one (detector, classifier) then the proportion model.
    Train(RunArgs),
    /// Cross-validated evaluation; prints a table and writes eval.json.
    Eval(RunArgs),
    /// Write loss curves of every interval under FocalProp and WFL.
    PlotLosses(RunArgs),
    /// Export mask and proportion maps of one sample.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Benchmark profile: easy, imbalanced or distractor.
    #[arg(long)]
    profile: Option<BenchmarkProfile>,
    #[arg(long)]
    seed: Option<u64>,
    /// Prop, FocalProp or WFL.
    #[arg(long)]
    loss_mode: Option<LossMode>,
    /// masked, unmasked or oracle-mask.
    #[arg(long)]
    mask_mode: Option<MaskMode>,
    #[arg(long)]
    folds: Option<usize>,
    /// Worker threads for per-sample gradients.
    #[arg(long)]
    threads: Option<usize>,
    /// Proportion-model epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Proportion-model learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    downsample: Option<usize>,
    #[arg(long)]
    detector_epochs: Option<usize>,
    #[arg(long)]
    classifier_epochs: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    nms_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// Sample id to export.
    #[arg(long)]
    sample: String,
    #[command(flatten)]
    run: RunArgs,
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// Anything that fails while running (exit 1).
    Runtime(masked_llp::Error),
}

impl From<masked_llp::Error> for CliError {
    fn from(e: masked_llp::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn seed_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl RunArgs {
    /// File values, then the seed variable, then flags.
    pub fn resolve(&self, base: RunConfig) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path).map_err(CliError::Usage)?,
            None => base,
        };
        if let Some(seed) = seed_from_env()? {
            c.seed = seed;
        }
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($field)+ = v;
                }
            };
        }
        set!(profile => profile);
        set!(seed => seed);
        set!(loss_mode => loss_mode);
        set!(mask_mode => mask_mode);
        set!(folds => folds);
        set!(threads => proportion.threads);
        set!(epochs => proportion.epochs);
        set!(batch_size => proportion.batch_size);
        set!(patience => proportion.patience);
        set!(downsample => proportion.downsample);
        set!(detector_epochs => detect.detector_epochs);
        set!(classifier_epochs => detect.classifier_epochs);
        set!(sigma => detect.sigma);
        set!(alpha => detect.alpha);
        set!(threshold => detect.threshold);
        set!(nms_radius => detect.nms_radius);
        if let Some(lr) = self.lr {
            c.proportion.optimizer = c.proportion.optimizer.with_lr(lr);
        }
        if self.dataset.is_some() {
            c.dataset = self.dataset.clone();
        }
        if self.out.is_some() {
            c.output = self.out.clone();
        }
        if self.checkpoints.is_some() {
            c.checkpoints = self.checkpoints.clone();
        }
        c.validate().map_err(CliError::Usage)?;
        Ok(c)
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a.resolve(RunConfig::default())?),
        Command::Train(a) => commands::train(&a.resolve(RunConfig::default())?),
        Command::Eval(a) => commands::eval(&a.resolve(RunConfig::default())?),
        Command::PlotLosses(a) => commands::plot_losses(&a.resolve(RunConfig::default())?),
        Command::Visualize(v) => {
            let base = commands::trained_config(v.run.checkpoints.as_deref())?;
            commands::visualize(&v.run.resolve(base)?, &v.sample)
        }
    }
}

/// Parses `args` (program name first), runs, and maps the outcome to the
/// process exit code: 0 success, 1 runtime failure, 2 usage or configuration
/// error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
