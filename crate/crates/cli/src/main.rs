mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::{ablate, evaluate, report, synthesize, tune};
use crate::config::Overrides;

/// Synthesize task-specific training data from a few demonstrations, filter
/// it, and evaluate the outcome.
#[derive(Debug, Parser)]
#[command(name = "selfsynth", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Verbose tracing on stderr, including request and response bodies.
    #[arg(long, global = true)]
    debug: bool,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run generation, filtering and annotation; writes datasets and a manifest.
    Synthesize(synthesize::SynthesizeArgs),
    /// Write prompt/completion records for an external finetuning job.
    ExportFinetune(synthesize::ExportArgs),
    /// Score predictions from a file or from the configured backend.
    Evaluate(evaluate::EvaluateArgs),
    /// Evaluate in context with as many synthetic examples as fit the budget.
    SelfIcl(evaluate::SelfIclArgs),
    /// Random search for synthesis parameters maximizing worst-task gain.
    Tune(tune::TuneArgs),
    /// Filter ablations or label randomization.
    Ablate(ablate::AblateArgs),
    /// Assemble score, ablation, sensitivity or distribution tables.
    Report(report::ReportArgs),
}

fn init_tracing(debug: bool) {
    let filter = if debug {
        tracing_subscriber::EnvFilter::new("debug")
    } else {
        tracing_subscriber::EnvFilter::try_from_default_env()
            .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"))
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    use selfsynth::Error as E;
    let message = format!("{err:#}");
    match err.downcast_ref::<E>() {
        Some(E::EmptyDataset { stage, .. }) => json!({"kind": "empty_dataset", "stage": stage, "message": message}),
        Some(E::Parse { origin, field, .. }) => {
            json!({"kind": "parse", "origin": origin, "field": field, "message": message})
        }
        Some(E::Io { path, .. }) => json!({"kind": "io", "path": path, "message": message}),
        Some(E::Validation(_)) => json!({"kind": "validation", "message": message}),
        Some(E::Argument(_)) => json!({"kind": "argument", "message": message}),
        Some(E::Template(_)) => json!({"kind": "template", "message": message}),
        Some(E::Backend(_)) => json!({"kind": "backend", "message": message}),
        Some(E::Json(_)) => json!({"kind": "serialization", "message": message}),
        None => json!({"kind": "other", "message": message}),
    }
}

async fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let ctx = commands::Context::new(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Synthesize(args) => synthesize::synthesize(&ctx, &args).await,
        Command::ExportFinetune(args) => synthesize::export(&ctx, &args),
        Command::Evaluate(args) => evaluate::evaluate(&ctx, &args).await,
        Command::SelfIcl(args) => evaluate::self_icl(&ctx, &args).await,
        Command::Tune(args) => tune::tune(&ctx, &args),
        Command::Ablate(args) => ablate::ablate(&ctx, &args).await,
        Command::Report(args) => report::report(&ctx, &args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_tracing(cli.debug);
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": "io", "message": e.to_string()}}));
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", json!({ "error": error_json(&err) }));
            ExitCode::FAILURE
        }
    }
}
