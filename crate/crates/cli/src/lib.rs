//! Command-line workflows for the emofuse pipeline: synthetic data,
//! adapter and classifier training, supervised inference and evaluation.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Context;
pub use config::Config;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "emofuse", version, about = "Multimodal sentiment fusion pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the `out` key (output directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Refit the per-modality scalers inside every CV fold.
    #[arg(long, global = true)]
    pub strict_cv: bool,

    /// Extra `key=value` overrides, applied after the file and environment.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic archive and labels file.
    GenSynthetic,
    /// Fit a ridge adapter from `archive` onto `target_archive`.
    TrainAdapter,
    /// Cross-validate and fit the fusion classifier.
    TrainClassifier,
    /// Classify archive segments through the agent supervisor.
    Infer {
        /// Segment key to classify; repeatable. Defaults to every key.
        #[arg(long)]
        segment: Vec<String>,
    },
    /// Score a predictions file against labels.
    Evaluate,
}

impl Cli {
    /// Resolves the configuration: file, then `EMOFUSE_*` environment,
    /// then `--set`, then the dedicated flags.
    pub fn context(&self, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Context> {
        let mut config = Config::load(self.config.as_deref(), env, &self.overrides)?;
        if let Some(seed) = self.seed {
            config.set("seed", &seed.to_string())?;
        }
        if let Some(out) = &self.out {
            config.set("out", &out.to_string_lossy())?;
        }
        if self.strict_cv {
            config.set("cv.strict", "true")?;
        }
        let segments = match &self.command {
            Command::Infer { segment } => segment.clone(),
            _ => Vec::new(),
        };
        Ok(Context {
            config,
            strict_cv: self.strict_cv,
            segments,
        })
    }
}

pub fn run(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> CliResult<()> {
    let ctx = cli.context(env)?;
    match cli.command {
        Command::GenSynthetic => commands::synth::run(&ctx),
        Command::TrainAdapter => commands::adapter::run(&ctx),
        Command::TrainClassifier => commands::train::run(&ctx),
        Command::Infer { .. } => commands::infer::run(&ctx),
        Command::Evaluate => commands::evaluate::run(&ctx),
    }
}
