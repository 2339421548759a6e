//! Command-line entry point. Parses flags, layers config sources, runs
//! one pipeline command, and reports the result: summary lines on
//! stdout, warnings and a machine-readable error record on stderr.

use clap::{Args, Parser, Subcommand};
use dialogen::bootstrap::BootstrapMode;
use dialogen::config::{load_config, CliOverrides, PipelineConfig, SplitName};
use dialogen::pipeline::{run, Command as PipelineCommand, PipelineError, RawFormat};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dialogen",
    about = "Reasoning-chain prompting, trace bootstrapping, and corpus evaluation for dialogue generation",
    version
)]
struct Cli {
    /// Pipeline config file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset preset supplying thresholds and expected split sizes.
    #[arg(long, global = true, value_parser = ["meddg", "kamed"])]
    preset: Option<String>,
    /// Force all backends onto the built-in mocks.
    #[arg(long, global = true)]
    mock_backends: bool,
    /// Root seed for sampling and few-shot selection.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; must not exist yet.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for instance-level parallelism.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Cap on fine-tune iterations.
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Convert a raw dialogue dump to the canonical corpus format.
    Ingest {
        /// Raw input file.
        #[arg(long)]
        raw: PathBuf,
        /// Raw layout: auto, json (one array), or jsonl (one session per line).
        #[arg(long, default_value = "auto")]
        format: String,
        /// Which split this file is, for size checks against the preset.
        #[arg(long, default_value = "train", value_parser = ["train", "valid", "test"])]
        split: String,
    },
    /// Turn a sessions corpus into per-turn generation instances.
    Expand {
        /// Sessions file; falls back to corpus.train from the config.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Solve the reasoning chain for every instance, without filtering.
    Solve {
        /// Instances or sessions file; falls back to corpus.train.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Generate, score, and filter reasoning traces.
    Bootstrap {
        #[command(subcommand)]
        mode: BootstrapCliMode,
    },
    /// Run the bootstrap/fine-tune/validate loop until plateau.
    Iterate {
        /// Training instances or sessions; falls back to corpus.train.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Validation instances or sessions; falls back to corpus.valid.
        #[arg(long)]
        valid: Option<PathBuf>,
    },
    /// Score line-aligned hypothesis and reference files.
    Eval {
        /// Hypothesis file, one response per line.
        #[arg(long)]
        hyp: PathBuf,
        /// Reference file, one response per line.
        #[arg(long = "ref")]
        references: PathBuf,
    },
    /// Rebuild a training file from a bootstrap records file.
    Export {
        /// records.jsonl from an earlier bootstrap run.
        #[arg(long)]
        records: PathBuf,
    },
}

#[derive(Subcommand, Clone)]
enum BootstrapCliMode {
    /// Greedy traces kept when every step clears its threshold;
    /// failures re-derived from the gold response.
    Ap(BootstrapInput),
    /// Sampled candidates under revised prompts until two agree.
    Pr(BootstrapInput),
    /// AP first, then PR on the instances AP could not keep.
    ApThenPr(BootstrapInput),
}

#[derive(Args, Clone)]
struct BootstrapInput {
    /// Instances or sessions file; falls back to corpus.train.
    #[arg(long)]
    input: Option<PathBuf>,
}

impl BootstrapCliMode {
    fn mode(&self) -> BootstrapMode {
        match self {
            BootstrapCliMode::Ap(_) => BootstrapMode::Ap,
            BootstrapCliMode::Pr(_) => BootstrapMode::Pr,
            BootstrapCliMode::ApThenPr(_) => BootstrapMode::ApThenPr,
        }
    }

    fn input(&self) -> Option<PathBuf> {
        match self {
            BootstrapCliMode::Ap(args)
            | BootstrapCliMode::Pr(args)
            | BootstrapCliMode::ApThenPr(args) => args.input.clone(),
        }
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    config.apply_env(|key| std::env::var(key).ok());
    config.apply_cli(&CliOverrides {
        preset: cli.preset.clone(),
        mock_backends: cli.mock_backends,
        seed: cli.seed,
        parallelism: cli.parallelism,
        max_iterations: cli.max_iterations,
    });
    config.validate()?;
    Ok(config)
}

fn to_pipeline_command(cli: &Cli) -> Result<PipelineCommand, PipelineError> {
    Ok(match &cli.command {
        CliCommand::Ingest { raw, format, split } => PipelineCommand::Ingest {
            raw: raw.clone(),
            format: RawFormat::parse(format)?,
            split: SplitName::parse(split)
                .ok_or_else(|| PipelineError::Input(format!("unknown split {split:?}")))?,
        },
        CliCommand::Expand { input } => PipelineCommand::Expand { input: input.clone() },
        CliCommand::Solve { input } => PipelineCommand::Solve { input: input.clone() },
        CliCommand::Bootstrap { mode } => {
            PipelineCommand::Bootstrap { mode: mode.mode(), input: mode.input() }
        }
        CliCommand::Iterate { train, valid } => {
            PipelineCommand::Iterate { train: train.clone(), valid: valid.clone() }
        }
        CliCommand::Eval { hyp, references } => {
            PipelineCommand::Eval { hypotheses: hyp.clone(), references: references.clone() }
        }
        CliCommand::Export { records } => PipelineCommand::Export { records: records.clone() },
    })
}

fn report_error(err: &PipelineError) {
    let record = serde_json::json!({
        "error": { "kind": err.kind(), "message": err.to_string() }
    });
    eprintln!("{record}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = match &cli.out {
        Some(dir) => dir.clone(),
        None => {
            report_error(&PipelineError::Input("--out <dir> is required".into()));
            return ExitCode::FAILURE;
        }
    };
    let result = build_config(&cli)
        .and_then(|config| to_pipeline_command(&cli).map(|cmd| (config, cmd)))
        .and_then(|(config, cmd)| run(&cmd, &config, &out_dir));
    match result {
        Ok(outcome) => {
            for warning in &outcome.warnings {
                eprintln!("warning: {warning}");
            }
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("artifacts in {}", outcome.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            report_error(&err);
            ExitCode::FAILURE
        }
    }
}
