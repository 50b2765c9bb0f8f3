//! `qspipe`: train, sample, and evaluate the query suggestion pipeline.
//!
//! Every subcommand prints exactly one machine-readable JSON summary line
//! to stdout; human-oriented detail (findings, tables, warnings) goes to
//! stderr. Exit codes: 0 success, 1 validation or usage failure, 2 model
//! transport exhaustion, 3 trainer hook failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "qspipe",
    version,
    about = "Training and evaluation pipeline for conversational query suggestion"
)]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "qspipe.toml", value_name = "FILE")]
    pub config: PathBuf,

    /// Override the configured root seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Override how many model calls run concurrently.
    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,

    /// Override the number of training iterations (the loop's K).
    #[arg(long, global = true, value_name = "ROUNDS")]
    pub k: Option<u32>,

    /// Serve every model call from the deterministic offline backend.
    #[arg(long, global = true)]
    pub mock: bool,

    /// Print the resolved plan without touching data or endpoints.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the configuration and every declared input file.
    Validate,
    /// Build the supervised warm-up mix from clicked and general data.
    SftBuild,
    /// Run one reinforcement round and hand the export to the trainer.
    RlRound {
        /// Round number; reads `hard-<round-1>.jsonl` when present.
        #[arg(long, default_value_t = 1, value_name = "N")]
        round: u32,
    },
    /// Label the unclicked pool with the policy and select hard examples.
    Sample {
        /// Round number used for seeding and output names.
        #[arg(long, default_value_t = 1, value_name = "N")]
        round: u32,
        /// Keep every usable record instead of selecting by uncertainty.
        #[arg(long)]
        no_uncertainty: bool,
    },
    /// Run the full loop: warm-up build plus K training iterations.
    Iterate {
        /// Keep every usable record instead of selecting by uncertainty.
        #[arg(long)]
        no_uncertainty: bool,
        /// Start reinforcement from the base policy without a warm-up set.
        #[arg(long)]
        skip_sft: bool,
        /// Stop cleanly after this round finishes; rerun to resume.
        #[arg(long, value_name = "N")]
        halt_after_round: Option<u32>,
    },
    /// Generate suggestion sets for the held-out test queries.
    Predict {
        /// Where to write predictions (default: workdir/predictions.jsonl).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// Query the configured base policy, ignoring training state.
        #[arg(long)]
        use_base_policy: bool,
    },
    /// Judge stored predictions and write the offline metric report.
    Eval {
        /// Judging passes to average over (default: eval.repeats).
        #[arg(long, value_name = "N")]
        repeats: Option<usize>,
        /// Predictions to score (default: workdir/predictions.jsonl).
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
        /// Paired judge/human labels for a reliability check.
        #[arg(long, value_name = "FILE")]
        labels: Option<PathBuf>,
        /// Where to write the report (default: workdir/eval_report.json).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Engagement metrics from an interaction event log.
    Metrics {
        /// Event log to read (default: paths.events from the config).
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        /// Keep events with timestamp >= this value (milliseconds).
        #[arg(long, value_name = "MS")]
        start: Option<i64>,
        /// Keep events with timestamp < this value (milliseconds).
        #[arg(long, value_name = "MS")]
        end: Option<i64>,
    },
    /// Combined training, offline-metric, and engagement summary.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::SftBuild => "sft-build",
            Command::RlRound { .. } => "rl-round",
            Command::Sample { .. } => "sample",
            Command::Iterate { .. } => "iterate",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::Metrics { .. } => "metrics",
            Command::Report => "report",
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit 1 so code 2 stays reserved for transport
    // exhaustion; --help and --version still exit 0.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            let code = if error.use_stderr() { 1 } else { 0 };
            let _ = error.print();
            return ExitCode::from(code);
        }
    };

    let command_name = cli.command.name();
    match commands::run(&cli.command, &cli.globals) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(error) => {
            let exit_code = error.exit_code();
            let mut body = serde_json::json!({
                "command": command_name,
                "status": "error",
                "kind": error.kind(),
                "detail": error.to_string(),
                "exit_code": exit_code,
            });
            if let Some(findings) = error.findings() {
                body["findings"] =
                    serde_json::to_value(findings).unwrap_or(serde_json::Value::Null);
            }
            println!("{body}");
            ExitCode::from(exit_code)
        }
    }
}
