//! `hda`: distribution-aware adversarial testing campaigns from the shell.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hda_core::{Indicator, PerceptMetricKind};

use config::Overrides;

/// Exit code 2 for bad configuration or inputs, 1 for failures while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<hda_core::Error> for CliError {
    fn from(e: hda_core::Error) -> Self {
        use hda_core::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::Dataset(_)
            | E::LabelOutOfRange { .. }
            | E::PixelOutOfRange { .. }
            | E::BadMagic
            | E::UnsupportedDtype(_)
            | E::Truncated { .. }
            | E::TrailingBytes(_)
            | E::NonFinite(_)
            | E::ShapeMismatch { .. }
            | E::Manifest(_)
            | E::SeedMisclassified { .. } => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(name = "hda", version, about = "Distribution-aware adversarial example testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Campaign configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Weight of the perceptual term.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_metric)]
    metric: Option<PerceptMetricKind>,
    #[arg(long, value_parser = parse_indicator)]
    indicator: Option<Indicator>,
    /// Number of seeds to select.
    #[arg(long)]
    k: Option<usize>,
    /// Total test budget M.
    #[arg(long)]
    budget: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            alpha: self.alpha,
            metric: self.metric,
            indicator: self.indicator,
            k: self.k,
            budget: self.budget,
        }
    }
}

fn parse_metric(s: &str) -> Result<PerceptMetricKind, String> {
    s.parse().map_err(|e: hda_core::Error| e.to_string())
}

fn parse_indicator(s: &str) -> Result<Indicator, String> {
    s.parse().map_err(|e: hda_core::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic 8x8 dataset, a trained model and a starter config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Half the smallest L-inf distance between differently labeled images.
    Rsep(Common),
    /// Fit PCA latents and embed the dataset.
    PcaFit(Common),
    /// Fit the latent KDE.
    KdeFit(Common),
    /// Rank seeds and split the test budget.
    Seeds(Common),
    /// Run the genetic search on the ranked seeds.
    Gen(Common),
    /// PGD baseline on the ranked seeds.
    Pgd(Common),
    /// Monte-Carlo local robustness of the ranked seeds.
    Robust(Common),
    /// Accuracy of an evaluation model on generated AEs.
    Eval(Common),
    /// Draw inputs from the fitted KDE.
    Sample(Common),
    /// Serve a builtin model over the wire protocol on stdin/stdout.
    Serve {
        #[arg(long)]
        model: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { out, samples, seed } => commands::synth(&out, samples, seed),
        Command::Serve { model } => commands::serve(&model),
        Command::Rsep(c) => commands::run("rsep", &c, commands::rsep),
        Command::PcaFit(c) => commands::run("pca-fit", &c, commands::pca_fit),
        Command::KdeFit(c) => commands::run("kde-fit", &c, commands::kde_fit),
        Command::Seeds(c) => commands::run("seeds", &c, commands::seeds),
        Command::Gen(c) => commands::run("gen", &c, commands::gen),
        Command::Pgd(c) => commands::run("pgd", &c, commands::pgd),
        Command::Robust(c) => commands::run("robust", &c, commands::robust),
        Command::Eval(c) => commands::run("eval", &c, commands::eval),
        Command::Sample(c) => commands::run("sample", &c, commands::sample),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hda: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
