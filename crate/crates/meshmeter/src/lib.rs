//! Offline tooling on top of the measurement crates. Collector exports become
//! latency reports; link emulator scenarios become validation tables and plots.

pub mod report;
pub mod validation;

pub use report::{load_records, parse_order, parse_records, write_report, ReportOutput};
pub use validation::{run_scenarios, write_validation};
