use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use meshmeter_agent::config::DEFAULT_LOOKUP_URL;
use meshmeter_agent::{run_agent, AgentConfig, IpLookupMode, RunOptions};
use tokio::sync::watch;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "meshmeter-agent", about = "Full-mesh RTT measurement agent")]
struct Args {
    /// Signaling server, `tcp://host:port` or `host:port`.
    #[arg(long)]
    signaling: String,
    #[arg(long)]
    session: String,
    #[arg(long)]
    id: String,
    /// Collector base URL, e.g. http://127.0.0.1:7402
    #[arg(long)]
    collector: String,
    #[arg(long, default_value_t = 100)]
    payload_size: usize,
    #[arg(long, default_value_t = 1000)]
    send_interval_ms: u64,
    #[arg(long, default_value_t = 1000)]
    stats_interval_ms: u64,
    /// Stop after this many seconds; runs until interrupted otherwise.
    #[arg(long)]
    duration_s: Option<u64>,
    #[arg(long, value_enum, default_value_t = IpLookupMode::Stub)]
    ip_lookup: IpLookupMode,
    #[arg(long, default_value = DEFAULT_LOOKUP_URL)]
    lookup_url: String,
    /// Newline-delimited JSON copy of every record produced.
    #[arg(long)]
    log_path: Option<PathBuf>,
    #[arg(long, default_value = "0.0.0.0:0")]
    udp_bind: SocketAddr,
    /// Print the run summary as JSON on exit.
    #[arg(long)]
    summary: bool,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let cfg = AgentConfig {
        signaling_url: args.signaling,
        session_id: args.session,
        client_id: args.id,
        collector_url: args.collector,
        payload_size: args.payload_size,
        send_interval_ms: args.send_interval_ms,
        stats_interval_ms: args.stats_interval_ms,
        duration_s: args.duration_s,
        ip_lookup: args.ip_lookup,
        lookup_url: args.lookup_url,
        log_path: args.log_path,
    };
    let (stop_tx, stop_rx) = watch::channel(false);
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            let _ = stop_tx.send(true);
        }
    });
    let opts = RunOptions {
        udp_bind: args.udp_bind,
        network: None,
        shutdown: Some(stop_rx),
    };
    match run_agent(cfg, opts).await {
        Ok(summary) => {
            if args.summary {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&summary).expect("summary serializes")
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("meshmeter-agent: {e}");
            ExitCode::FAILURE
        }
    }
}
