//! Ingest API and append-only persistence for measurement records.

pub mod client;
pub mod http;
pub mod store;

pub use client::{parse_ndjson, CollectorClient, PostError};
pub use http::{router, start, AppState, CollectorHandle, DEFAULT_PORT, RECORDS_PATH};
pub use store::{ExportFilter, Store, StoreOptions, StoredEntry};
