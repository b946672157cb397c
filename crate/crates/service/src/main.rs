use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use notepilot_core::llm::MockConfig;
use notepilot_core::prompt::{CustomizedKeyword, PromptSet};
use notepilot_core::replay::{self, ReplayConfig};
use notepilot_core::session::SessionConfig;
use notepilot_core::store::{ExportFormat, SessionArchive};
use notepilot_core::transcript;
use notepilot_service::config::ServiceConfig;
use notepilot_service::server;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "notepilot", version, about = "Keyword-driven live note taking")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the session server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay a recorded trace and action script against the mock backend.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        script: PathBuf,
        /// Output directory; receives `sessions/<id>/` and `metrics.txt`.
        #[arg(long)]
        out: PathBuf,
        /// Service config whose customized keywords, prompts and mock latencies apply.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a stored session.
    Export {
        #[arg(long)]
        session: String,
        /// `plain_text` or `structured`.
        #[arg(long, default_value = "plain_text")]
        format: String,
        /// Storage root; defaults to the root from `--config`.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Cmd::Serve { config } => serve(&config),
        Cmd::Replay { trace, script, out, config } => replay_cmd(&trace, &script, &out, config.as_deref()),
        Cmd::Export { session, format, root, config } => export(&session, &format, root, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn serve(path: &Path) -> anyhow::Result<()> {
    let config = ServiceConfig::load(path)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let server = server::bind(config).await?;
        tracing::info!(addr = %server.local_addr()?, "listening");
        let registry = server.registry();
        tokio::select! {
            r = server.run() => r?,
            _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
        }
        registry.shutdown().await;
        Ok(())
    })
}

fn replay_cmd(trace: &Path, script: &Path, out: &Path, config: Option<&Path>) -> anyhow::Result<()> {
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
    let records = transcript::parse_trace(&read(trace)?).with_context(|| format!("trace {}", trace.display()))?;
    let entries = replay::parse_script(&read(script)?).with_context(|| format!("script {}", script.display()))?;

    let mut rc = ReplayConfig::default();
    if let Some(path) = config {
        let c = ServiceConfig::load(path)?;
        rc.session = SessionConfig { customized: c.customized.iter().map(CustomizedKeyword::new).collect() };
        if let Some(dir) = &c.prompts_dir {
            rc.prompts = Arc::new(PromptSet::from_dir(dir)?);
        }
        rc.mock = MockConfig { latency: c.backend.mock_latency, jitter_ms: c.backend.mock_jitter_ms, ..rc.mock };
        rc.timeout_ms = c.backend.timeout_ms;
    }
    let result = replay::run(&rc, &records, &entries)?;

    let archive = result.archive(&rc);
    let dir = out.join("sessions").join(&result.id);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("cannot replace {}", dir.display()))?;
    }
    archive.write(out)?;
    let metrics = result.metrics().to_string();
    std::fs::write(out.join("metrics.txt"), &metrics)?;
    eprintln!("session {} written to {}", result.id, dir.display());
    print!("{metrics}");
    Ok(())
}

fn export(session: &str, format: &str, root: Option<PathBuf>, config: Option<&Path>) -> anyhow::Result<()> {
    let format = ExportFormat::parse(format)
        .with_context(|| format!("unknown format {format:?}; expected plain_text or structured"))?;
    let root = match (root, config) {
        (Some(r), _) => r,
        (None, Some(c)) => ServiceConfig::load(c)?.root,
        (None, None) => anyhow::bail!("pass --root or --config"),
    };
    let archive = SessionArchive::load(&root, session)?;
    print!("{}", archive.export(format));
    Ok(())
}
