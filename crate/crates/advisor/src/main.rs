use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use titration_advisor::{router, AppState, ServiceConfig};

/// Basal insulin titration advisor (HTTP JSON API).
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, env = "ADVISOR_BIND", default_value = "127.0.0.1")]
    bind: std::net::IpAddr,

    #[arg(long, env = "ADVISOR_PORT", default_value_t = 8080)]
    port: u16,

    /// Directory holding the event log.
    #[arg(long, env = "ADVISOR_DATA_DIR", default_value = "advisor-data")]
    data_dir: PathBuf,

    /// TOML file with default drug, titration and prior settings.
    #[arg(long, env = "ADVISOR_CONFIG")]
    config: Option<PathBuf>,

    /// Require `Authorization: Bearer <token>` on every API call.
    #[arg(long, env = "ADVISOR_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let defaults = match &args.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    let state = AppState::open(&args.data_dir, defaults, args.token)?;
    let addr = SocketAddr::new(args.bind, args.port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, store = %state.store_path().display(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
