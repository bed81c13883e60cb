use std::path::PathBuf;
use std::time::Duration;

use meshmeter_core::probe::{DEFAULT_PAYLOAD_SIZE, REQUEST_HEADER_LEN};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_INTERVAL_MS: u64 = 100;
pub const DEFAULT_LOOKUP_URL: &str = "https://ipinfo.io/json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum IpLookupMode {
    Live,
    #[default]
    Stub,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub signaling_url: String,
    pub session_id: String,
    pub client_id: String,
    pub collector_url: String,
    pub payload_size: usize,
    pub send_interval_ms: u64,
    pub stats_interval_ms: u64,
    /// Unbounded when absent.
    pub duration_s: Option<u64>,
    pub ip_lookup: IpLookupMode,
    pub lookup_url: String,
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("payload size {0} is below the {REQUEST_HEADER_LEN}-octet probe header")]
    PayloadTooSmall(usize),
    #[error("{name} of {value} ms is below the {MIN_INTERVAL_MS} ms minimum")]
    IntervalTooShort { name: &'static str, value: u64 },
    #[error("{0} must be nonempty")]
    Empty(&'static str),
}

impl AgentConfig {
    pub fn new(
        signaling_url: &str,
        session_id: &str,
        client_id: &str,
        collector_url: &str,
    ) -> Self {
        Self {
            signaling_url: signaling_url.to_string(),
            session_id: session_id.to_string(),
            client_id: client_id.to_string(),
            collector_url: collector_url.to_string(),
            payload_size: DEFAULT_PAYLOAD_SIZE,
            send_interval_ms: 1000,
            stats_interval_ms: 1000,
            duration_s: None,
            ip_lookup: IpLookupMode::Stub,
            lookup_url: DEFAULT_LOOKUP_URL.to_string(),
            log_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("signaling url", &self.signaling_url),
            ("session id", &self.session_id),
            ("client id", &self.client_id),
            ("collector url", &self.collector_url),
        ] {
            if v.is_empty() {
                return Err(ConfigError::Empty(name));
            }
        }
        if self.payload_size < REQUEST_HEADER_LEN {
            return Err(ConfigError::PayloadTooSmall(self.payload_size));
        }
        for (name, value) in [
            ("send interval", self.send_interval_ms),
            ("stats interval", self.stats_interval_ms),
        ] {
            if value < MIN_INTERVAL_MS {
                return Err(ConfigError::IntervalTooShort { name, value });
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> Option<Duration> {
        self.duration_s.map(Duration::from_secs)
    }
}
