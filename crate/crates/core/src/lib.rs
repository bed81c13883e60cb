//! Measurement primitives for full-mesh RTT measurement: the probe wire
//! format, jitter estimation, the record schema shared with the collector,
//! offline analysis and the link emulator used to validate all of it.

pub mod analysis;
pub mod jitter;
pub mod linklab;
pub mod probe;
pub mod record;
pub mod svg;

pub use jitter::{update_jitter, JitterState};
pub use probe::{ProbeError, ProbeMessage, ProbeRequest, ProbeResponse, RttSample};
pub use record::{MeasurementRecord, SchemaViolation};
