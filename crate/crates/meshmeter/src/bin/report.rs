use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use meshmeter::{load_records, parse_order, write_report};
use meshmeter_core::analysis::DEFAULT_THRESHOLD_MS;

/// Latency report from collected records.
#[derive(Parser)]
#[command(name = "meshmeter-report", version)]
struct Args {
    /// Collector base URL, or a path to an export file or data directory.
    #[arg(long)]
    input: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_MS)]
    threshold_ms: f64,
    /// Node order for heatmap rows and columns, one id per line.
    #[arg(long)]
    order: Option<PathBuf>,
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<()> {
    let args = Args::parse();
    let records = load_records(&args.input).await?;
    let order = match &args.order {
        Some(p) => Some(parse_order(
            &std::fs::read_to_string(p).with_context(|| p.display().to_string())?,
        )),
        None => None,
    };
    let out = write_report(&records, &args.out, args.threshold_ms, order)?;
    let f = out.histogram.fractions();
    println!(
        "{} records over {} nodes; <60: {:.1}%  60-100: {:.1}%  >=100: {:.1}%",
        records.len(),
        out.nodes.len(),
        f[0] * 100.0,
        f[1] * 100.0,
        f[2] * 100.0
    );
    if let Some(m) = &out.mesh {
        println!(
            "observed {}/{} directed pairs, {} asymmetric, {} under threshold by mean, {} by p99",
            m.observed_pairs,
            m.expected_directed_pairs,
            m.asymmetric_pairs.len(),
            m.pairs_under_threshold_mean,
            m.pairs_under_threshold_p99
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
