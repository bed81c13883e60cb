//! Rendezvous for measurement sessions: keeps a roster per session, reports
//! each member's observed address, and relays opaque descriptors between
//! members over newline-delimited JSON on TCP.

pub mod client;
pub mod envelope;
pub mod registry;
pub mod server;

pub use client::{parse_signaling_url, ClientError, SignalReader, SignalWriter, SignalingClient};
pub use envelope::{Envelope, EnvelopeKind, Member, SessionRoster};
pub use registry::{MemberToken, Registry, SignalError, DEFAULT_CAPACITY};
pub use server::{
    start, ErrorPayload, ServerConfig, ServerHandle, DEFAULT_IDLE_TIMEOUT, DEFAULT_PORT,
};
