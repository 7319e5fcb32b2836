use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use metabokg_service::{build_state, router, ServiceConfig};

#[derive(Parser)]
#[command(name = "metabokg-service", about = "Session API for the metabolomics SPARQL agents")]
struct Args {
    /// TOML config; built-in defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

async fn run(args: Args) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    let state = build_state(&config)?;
    let listener = tokio::net::TcpListener::bind(&config.bind).await.with_context(|| format!("binding {}", config.bind))?;
    tracing::info!(
        addr = %listener.local_addr()?,
        mode = ?config.runtime.mode,
        model = %config.runtime.model_ref,
        root = %config.artifact_root.display(),
        "listening"
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info,tower_http=debug".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Args::parse()).await {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
