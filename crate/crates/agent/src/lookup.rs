//! Public address and ISP of the agent, resolved once per run.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::IpLookupMode;

pub const STUB_IP: &str = "203.0.113.7";
pub const STUB_ISP: &str = "ExampleNet";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfInfo {
    pub ip: String,
    pub isp: String,
}

impl SelfInfo {
    pub fn stub() -> Self {
        Self {
            ip: STUB_IP.into(),
            isp: STUB_ISP.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LookupError {
    #[error("lookup request failed: {0}")]
    Http(String),
    #[error("lookup body unusable: {0}")]
    Body(String),
}

#[derive(Deserialize)]
struct LookupBody {
    ip: String,
    /// ipinfo-style responses name the ISP in `org`.
    org: Option<String>,
    isp: Option<String>,
}

pub fn parse_lookup_body(body: &str) -> Result<SelfInfo, LookupError> {
    let b: LookupBody = serde_json::from_str(body).map_err(|e| LookupError::Body(e.to_string()))?;
    Ok(SelfInfo {
        ip: b.ip,
        isp: b.org.or(b.isp).unwrap_or_default(),
    })
}

pub async fn lookup_live(url: &str) -> Result<SelfInfo, LookupError> {
    let client = reqwest::Client::builder()
        .timeout(Duration::from_secs(5))
        .build()
        .map_err(|e| LookupError::Http(e.to_string()))?;
    let resp = client
        .get(url)
        .header("accept", "application/json")
        .send()
        .await
        .map_err(|e| LookupError::Http(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(LookupError::Http(format!("HTTP {}", resp.status())));
    }
    let body = resp
        .text()
        .await
        .map_err(|e| LookupError::Http(e.to_string()))?;
    parse_lookup_body(&body)
}

/// Never fails: a live lookup that goes wrong degrades to empty strings so
/// the measurement itself carries on.
pub async fn lookup_self(mode: IpLookupMode, url: &str) -> SelfInfo {
    match mode {
        IpLookupMode::Off => SelfInfo::default(),
        IpLookupMode::Stub => SelfInfo::stub(),
        IpLookupMode::Live => match lookup_live(url).await {
            Ok(info) => info,
            Err(e) => {
                tracing::warn!("{e}; reporting empty ip and isp");
                SelfInfo::default()
            }
        },
    }
}
