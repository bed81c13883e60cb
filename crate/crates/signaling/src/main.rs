use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use meshmeter_signaling::{server, Registry, DEFAULT_CAPACITY, DEFAULT_PORT};
use tokio::net::TcpListener;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "meshmeter-signal",
    about = "Session roster and descriptor relay"
)]
struct Args {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
    #[arg(long, default_value_t = DEFAULT_CAPACITY)]
    capacity: usize,
    /// Seconds without an inbound line before a member is dropped.
    #[arg(long, default_value_t = 30)]
    idle_timeout_s: u64,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();
    let args = Args::parse();
    let listener = TcpListener::bind((args.bind.as_str(), args.port)).await?;
    tracing::info!("signaling on {}", listener.local_addr()?);
    let registry = Arc::new(Registry::new(args.capacity));
    server::serve(listener, registry, Duration::from_secs(args.idle_timeout_s)).await;
    Ok(())
}
