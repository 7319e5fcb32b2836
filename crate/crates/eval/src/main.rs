use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use metabokg_core::setup::GatewayKind;
use metabokg_eval::{aggregate_metrics, load_dataset, EvalConfig, Runner};

#[derive(Parser)]
#[command(name = "eval", about = "Benchmark the metabolomics SPARQL agents against a question set")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every question and write a JSON report.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Replay,
    Record,
}

#[derive(clap::Args)]
struct RunArgs {
    /// CSV with question, reference_query and complexity columns.
    #[arg(long)]
    dataset: PathBuf,
    /// TOML evaluation config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's gateway mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Overrides the config's cassette.
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-question JSON lines; defaults to the report path with a
    /// `.records.jsonl` suffix.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Session directories; defaults to `<out>.sessions`.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

async fn run(args: RunArgs) -> anyhow::Result<()> {
    let questions = load_dataset(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
    let mut config = EvalConfig::load(&args.config)?;
    if let Some(mode) = args.mode {
        config.runtime.mode = match mode {
            Mode::Live => GatewayKind::Live,
            Mode::Replay => GatewayKind::Replay,
            Mode::Record => GatewayKind::Record,
        };
    }
    if let Some(c) = args.cassette {
        config.runtime.cassette = Some(c);
    }
    let work_dir = args.work_dir.unwrap_or_else(|| with_suffix(&args.out, ".sessions"));
    let runner = Runner::from_config(&config, &work_dir)?;

    let records_path = args.records.unwrap_or_else(|| with_suffix(&args.out, ".records.jsonl"));
    let mut sink = BufWriter::new(File::create(&records_path).with_context(|| format!("creating {}", records_path.display()))?);
    let mut write_error = None;
    let done = runner
        .run_all(&questions, |e| {
            if write_error.is_none() {
                let line = serde_json::to_string(&e.record).expect("records serialize");
                if let Err(err) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                    write_error = Some(err);
                }
            }
        })
        .await;
    if let Some(e) = write_error {
        bail!("writing {}: {e}", records_path.display());
    }
    let records: Vec<_> = done.into_iter().map(|e| e.record).collect();
    let report = aggregate_metrics(&records, &config.exclude)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", args.out.display()))?;
    print!("{}", report.table());
    Ok(())
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Run(args) => run(args).await,
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
