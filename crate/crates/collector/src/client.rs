use std::time::Duration;

use meshmeter_core::MeasurementRecord;
use serde::Deserialize;
use thiserror::Error;

use crate::http::RECORDS_PATH;
use crate::store::ExportFilter;

#[derive(Debug, Error)]
pub enum PostError {
    /// The collector answered and refused the record; retrying cannot help.
    #[error("collector rejected record ({status}): {body}")]
    Rejected { status: u16, body: String },
    /// Transport failure or a server-side error; worth retrying.
    #[error("collector unavailable: {0}")]
    Unavailable(String),
}

#[derive(Deserialize)]
struct Ack {
    index: u64,
}

#[derive(Clone)]
pub struct CollectorClient {
    base: String,
    http: reqwest::Client,
}

impl CollectorClient {
    pub fn new(base_url: &str) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
            .expect("http client");
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            http,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Posts one record and returns the index the collector assigned.
    pub async fn post_record(&self, record: &MeasurementRecord) -> Result<u64, PostError> {
        let resp = self
            .http
            .post(format!("{}{RECORDS_PATH}", self.base))
            .json(record)
            .send()
            .await
            .map_err(|e| PostError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if status.is_client_error() {
            let body = resp.text().await.unwrap_or_default();
            return Err(PostError::Rejected {
                status: status.as_u16(),
                body,
            });
        }
        if !status.is_success() {
            return Err(PostError::Unavailable(format!("HTTP {status}")));
        }
        resp.json::<Ack>()
            .await
            .map(|a| a.index)
            .map_err(|e| PostError::Unavailable(e.to_string()))
    }

    pub async fn export(&self, filter: &ExportFilter) -> Result<Vec<MeasurementRecord>, PostError> {
        let mut query: Vec<(&str, String)> = Vec::new();
        if let Some(f) = filter.from_ms {
            query.push(("from_ms", f.to_string()));
        }
        if let Some(t) = filter.to_ms {
            query.push(("to_ms", t.to_string()));
        }
        if let Some(r) = &filter.reporter {
            query.push(("reporter", r.clone()));
        }
        let resp = self
            .http
            .get(format!("{}{RECORDS_PATH}", self.base))
            .query(&query)
            .send()
            .await
            .map_err(|e| PostError::Unavailable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .await
            .map_err(|e| PostError::Unavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(PostError::Rejected {
                status: status.as_u16(),
                body,
            });
        }
        parse_ndjson(&body).map_err(|e| PostError::Unavailable(e.to_string()))
    }
}

/// Parses an export body, one record per nonblank line.
pub fn parse_ndjson(text: &str) -> Result<Vec<MeasurementRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
