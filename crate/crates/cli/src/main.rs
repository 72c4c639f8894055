use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use medfaith_cli::commands;
use medfaith_cli::{Outcome, Overrides, RunConfig};
use medfaith_core::Language;

#[derive(Parser)]
#[command(
    name = "medfaith",
    version,
    about = "Faithfulness tooling for medical summarization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile name; replaces the config's profile.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossFlags {
    /// Include gradients in losses.jsonl.
    #[arg(long)]
    grad: bool,
    /// Audit gradients with central finite differences.
    #[arg(long)]
    check_fd: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Lang {
    En,
    Zh,
}

#[derive(Subcommand)]
enum Command {
    /// Build positive and negative summary sets for every instance.
    BuildSets(Common),
    /// Build sparse MKI vectors for every reference.
    BuildMki(Common),
    /// Evaluate losses from representation, logit and CE files.
    EvalLoss {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: LossFlags,
    },
    /// Concept F1 over predictions and the error-taxonomy report.
    Metrics(Common),
    /// Every stage whose inputs are configured.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: LossFlags,
    },
    /// Write a seeded toy corpus, lexicon, vocabulary and config.
    Synth {
        #[arg(long, value_enum, default_value = "en")]
        language: Lang,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(c: Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        profile: c.profile,
        seed: c.seed,
        out: c.out,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::BuildSets(c) => commands::build_sets(&config(c)?),
        Command::BuildMki(c) => commands::build_mki(&config(c)?),
        Command::EvalLoss { common, flags } => {
            commands::eval_loss(&config(common)?, flags.grad, flags.check_fd)
        }
        Command::Metrics(c) => commands::metrics(&config(c)?),
        Command::Pipeline { common, flags } => {
            commands::pipeline(&config(common)?, flags.grad, flags.check_fd)
        }
        Command::Synth {
            language,
            n,
            seed,
            out,
        } => {
            let language = match language {
                Lang::En => Language::English,
                Lang::Zh => Language::Chinese,
            };
            commands::synth(language, n, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for e in &outcome.record_errors {
                eprintln!("error: {e}");
            }
            for path in &outcome.written {
                eprintln!("wrote {}", path.display());
            }
            if outcome.record_errors.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} record(s) failed", outcome.record_errors.len());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
