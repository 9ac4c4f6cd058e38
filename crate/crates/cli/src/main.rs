use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tabforge_cli::commands::{cmd_evaluate, cmd_generate, cmd_prepare, EvaluateOptions};
use tabforge_cli::config::{EffectiveConfig, FlagOverrides};
use tabforge_cli::error::CliError;

/// Synthetic tabular data toolchain: build kNN-grouped instruction
/// datasets from a CSV, sample synthetic rows through a generation
/// backend, and score the result for utility and privacy.
#[derive(Parser)]
#[command(name = "tabforge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Declarative config file (TOML); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory all artifacts are read from and written to.
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
    /// Input CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Label column name.
    #[arg(long)]
    label: Option<String>,
    /// Domain phrase for the instruction preamble.
    #[arg(long)]
    subject: Option<String>,
    /// Neighbors per group.
    #[arg(long)]
    k: Option<usize>,
    /// Sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Target synthetic row count.
    #[arg(long)]
    target: Option<usize>,
    /// Prompt oversampling factor.
    #[arg(long)]
    oversample: Option<f64>,
    /// Generation seed; repeat for multi-run experiments.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Seed for the train/val/test split.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Skip the label-majority group filter.
    #[arg(long)]
    no_filter: bool,
    /// Keep features in canonical order instead of permuting.
    #[arg(long)]
    no_permute: bool,
    /// Backend kind: mock or http.
    #[arg(long)]
    backend: Option<String>,
    /// Completions endpoint URL (or set TABFORGE_ENDPOINT).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to HTTP backends.
    #[arg(long)]
    model: Option<String>,
    /// Concurrent request cap.
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Append request/response audit JSONL here.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a CSV and build the instruction + prompt datasets.
    Prepare(CommonArgs),
    /// Sample synthetic tables through the backend, one CSV per seed.
    Generate(CommonArgs),
    /// Score privacy (DCR, NRS, DLT) and utility (MLE, optionally LLE).
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Score the configured backend on the real test set.
        #[arg(long)]
        lle: bool,
        /// Emit downstream fine-tuning JSONL per synthetic dataset.
        #[arg(long)]
        emit_downstream: bool,
        /// Write per-row DCR minima CSVs.
        #[arg(long)]
        dcr_csv: bool,
    },
}

fn resolve(common: &CommonArgs) -> Result<EffectiveConfig, CliError> {
    let flags = FlagOverrides {
        csv: common.csv.clone(),
        label: common.label.clone(),
        subject: common.subject.clone(),
        k: common.k,
        temperature: common.temperature,
        target: common.target,
        oversample: common.oversample,
        seeds: common.seeds.clone(),
        split_seed: common.split_seed,
        no_filter: common.no_filter,
        no_permute: common.no_permute,
        backend_kind: common.backend.clone(),
        endpoint: common.endpoint.clone(),
        model: common.model.clone(),
        max_in_flight: common.max_in_flight,
        audit: common.audit.clone(),
    };
    EffectiveConfig::resolve(common.config.as_deref(), &flags, common.run_dir.clone())
}

fn run() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Prepare(common) => {
            let config = resolve(&common)?;
            let summary = cmd_prepare(&config)?;
            let m = &summary.manifest;
            println!(
                "prepared: {} train / {} val / {} test; {} finetune samples kept ({} discarded); {} prompts; config {}",
                m.counts.train,
                m.counts.val,
                m.counts.test,
                m.groups_kept,
                m.groups_discarded,
                m.prompt_count,
                m.config_hash
            );
        }
        Command::Generate(common) => {
            let config = resolve(&common)?;
            let summary = cmd_generate(&config)?;
            for report in &summary.reports {
                println!(
                    "seed {}: {}/{} rows, {} parse failures, {} retries",
                    report.seeds[0],
                    report.produced,
                    report.requested,
                    report.parse_failure_count(),
                    report.retries_used
                );
            }
        }
        Command::Evaluate {
            common,
            lle,
            emit_downstream,
            dcr_csv,
        } => {
            let config = resolve(&common)?;
            let summary = cmd_evaluate(
                &config,
                &EvaluateOptions {
                    lle,
                    emit_downstream,
                    dcr_csv,
                },
            )?;
            println!(
                "evaluated {} seed(s); DLT {}; reports in {}",
                summary.privacy_seeds,
                if summary.dlt_available {
                    "available"
                } else {
                    "unavailable (backend cannot score)"
                },
                config.run_dir.display()
            );
            if let Some(f1) = summary.lle_f1 {
                println!("llm downstream weighted F1: {f1:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
