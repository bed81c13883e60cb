use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use meshmeter::{run_scenarios, write_validation};
use meshmeter_core::linklab::parse_scenarios;

/// Probes emulated links and compares measured RTT with injected delay.
#[derive(Parser)]
#[command(name = "meshmeter-linklab", version)]
struct Args {
    /// JSON array of link specs, each with `n_probes`.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Real loopback sockets and real time instead of the virtual clock.
    #[arg(long)]
    wall_clock: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| args.scenario.display().to_string())?;
    let scenarios = parse_scenarios(&text)?;
    let reports = run_scenarios(&scenarios, args.wall_clock)?;
    write_validation(&reports, &args.out)?;
    print!(
        "{}",
        meshmeter_core::linklab::render_validation(&reports).table
    );
    Ok(())
}
