use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use meshmeter_core::linklab::{
    render_validation, run_validation_wallclock, run_validation_with, Scenario, ValidationReport,
};
use meshmeter_core::probe::DEFAULT_PAYLOAD_SIZE;

/// Runs each scenario in order. Virtual time unless `wall_clock`, in which
/// case probes really cross loopback sockets and take real time.
pub fn run_scenarios(scenarios: &[Scenario], wall_clock: bool) -> Result<Vec<ValidationReport>> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = s.label(i);
            let report = if wall_clock {
                run_validation_wallclock(&s.link, s.n_probes, s.interval_ms).map(|mut r| {
                    r.name = name.clone();
                    r
                })
            } else {
                run_validation_with(
                    &s.link,
                    s.n_probes,
                    s.interval_ms,
                    DEFAULT_PAYLOAD_SIZE,
                    name.clone(),
                )
            };
            report.with_context(|| format!("scenario {name}"))
        })
        .collect()
}

/// Writes the rendered comparison plus every scenario's ground truth.
pub fn write_validation(reports: &[ValidationReport], out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let art = render_validation(reports);
    fs::write(out.join("validation.txt"), &art.table)?;
    fs::write(out.join("validation.csv"), &art.csv)?;
    fs::write(out.join("boxplot.svg"), &art.boxplot_svg)?;
    let truth: String = reports
        .iter()
        .map(|r| r.ground_truth.to_ndjson(&r.name))
        .collect();
    fs::write(out.join("groundtruth.ndjson"), truth)?;
    Ok(())
}
