mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "kaml", version, about = "Multi-task CVR training on asymmetric conversion labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Experiment file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the data seed (generate, adapt-public, synth-raw) or the
    /// training seeds (train, ablate).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test split, ad-task table and coverage table.
    Generate(Common),
    /// Train one variant and write snapshot, history and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
        /// Overrides the mask the variant would use.
        #[arg(long, value_parser = ["base", "adm"])]
        mask: Option<String>,
    },
    /// Train every ablation variant over all seeds and tabulate the results.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variant list.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Convert a raw interaction log into asymmetric multi-label datasets.
    AdaptPublic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        raw: Option<PathBuf>,
        #[arg(long, value_parser = ["oracle", "vanilla", "kaml"])]
        protocol: Option<String>,
    },
    /// Write a synthetic raw interaction log for `adapt-public`.
    SynthRaw(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KAML_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(c) => commands::generate(&c),
        Command::Train { common, variant, mask } => commands::train(&common, variant.as_deref(), mask.as_deref()),
        Command::Ablate { common, variant } => commands::ablate(&common, variant.as_deref()),
        Command::AdaptPublic { common, raw, protocol } => commands::adapt_public(&common, raw, protocol.as_deref()),
        Command::SynthRaw(c) => commands::synth_raw(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
