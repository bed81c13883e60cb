use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use meshmeter_collector::{router, AppState, Store, StoreOptions, DEFAULT_PORT};
use tokio::net::TcpListener;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "meshmeter-collector",
    about = "Measurement record ingest and export"
)]
struct Args {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Directory with the participant page, served under /ui.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// fsync every append before acknowledging it.
    #[arg(long)]
    fsync: bool,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();
    let args = Args::parse();
    let store = Arc::new(Store::open(
        &args.data_dir,
        StoreOptions { fsync: args.fsync },
    )?);
    tracing::info!(
        "{} records on disk in {}",
        store.len(),
        args.data_dir.display()
    );
    let listener = TcpListener::bind((args.bind.as_str(), args.port)).await?;
    tracing::info!("collector on http://{}", listener.local_addr()?);
    let app = router(Arc::new(AppState {
        store,
        ui_dir: args.ui_dir,
    }));
    axum::serve(listener, app).await?;
    Ok(())
}
